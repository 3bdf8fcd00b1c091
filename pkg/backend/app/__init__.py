"""WeatherCorrection backend application package."""
