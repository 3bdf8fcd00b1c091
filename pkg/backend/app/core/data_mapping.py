# app/core/data_mapping.py


# 保留类别: 背景、墙体、机械臂遮挡
BACKGROUND = 0
WALL = 1
ROBOT = 255

# 家具(容器)类别: id -> (名称, 宽度范围m, 深度范围m, 表面高度范围m)
RECEPTACLE_CATALOG = {
    10: ("table", (0.9, 1.6), (0.6, 1.0), (0.70, 0.80)),
    11: ("chair", (0.45, 0.55), (0.45, 0.55), (0.45, 0.50)),
    12: ("cabinet", (0.6, 1.2), (0.4, 0.6), (0.80, 1.00)),
    13: ("counter", (1.2, 2.0), (0.5, 0.7), (0.90, 0.95)),
    14: ("shelves", (0.8, 1.2), (0.3, 0.4), (1.00, 1.20)),
    15: ("bed", (1.4, 2.0), (1.9, 2.1), (0.45, 0.60)),
    16: ("couch", (1.6, 2.2), (0.8, 1.0), (0.40, 0.50)),
    17: ("stool", (0.35, 0.45), (0.35, 0.45), (0.60, 0.75)),
}

# 可抓取物体类别: id -> (名称, 水平尺寸m, 高度m)
OBJECT_CATALOG = {
    30: ("cup", 0.08, 0.10),
    31: ("bowl", 0.14, 0.07),
    32: ("book", 0.16, 0.04),
    33: ("hat", 0.20, 0.12),
    34: ("toy", 0.10, 0.10),
    35: ("box", 0.18, 0.15),
    36: ("bottle", 0.07, 0.20),
    37: ("plant", 0.16, 0.20),
}

RECEPTACLE_CLASSES = sorted(RECEPTACLE_CATALOG.keys())
OBJECT_CLASSES = sorted(OBJECT_CATALOG.keys())

CLASS_NAMES = {
    BACKGROUND: "background",
    WALL: "wall",
    ROBOT: "robot",
    **{k: v[0] for k, v in RECEPTACLE_CATALOG.items()},
    **{k: v[0] for k, v in OBJECT_CATALOG.items()},
}

# 放置失败原因 -> 报表中使用的文字描述
FAILURE_CAUSE_LABELS = {
    "UnstablePlace": "unstable place",
    "MissedReceptacle": "missed receptacle",
    "CameraOverlap": "camera overlap with manipulator",
    "DidNotStartPlace": "did not start place skill",
    "Uncertain": "uncertain",
    "NotFailed": "not failed",
}


def get_class_name(class_id: int) -> str:
    """获取类别名称, 未知类别返回 class_<id>"""
    return CLASS_NAMES.get(class_id, f"class_{class_id}")
