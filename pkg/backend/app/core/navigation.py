# app/core/navigation.py
import math
import heapq
import numpy as np
from typing import Optional, List, Tuple, Callable
from scipy.ndimage import binary_dilation
from .schemas import CameraConfig
from .world import camera_rays, wrap_angle


UNKNOWN, FREE, OCCUPIED = 0, 1, 2

Cell = Tuple[int, int]

# 8邻域运动模型: (di, dj, 代价)
MOTIONS = [
    (1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0),
    (1, 1, math.sqrt(2)), (1, -1, math.sqrt(2)), (-1, 1, math.sqrt(2)), (-1, -1, math.sqrt(2)),
]


def back_project(
        depth: np.ndarray, pose: Tuple[float, float, float], cam: CameraConfig
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """深度图 -> 每个像素命中点的世界坐标(X, Y, Z)"""
    az, el = camera_rays(cam)
    x, y, theta = pose
    horizontal = depth / np.cos(az)[None, :]
    yaw = theta + az[None, :]
    X = x + horizontal * np.cos(yaw)
    Y = y + horizontal * np.sin(yaw)
    Z = cam.height_m + horizontal * np.tan(el)[:, None]
    return X, Y, Z


class OccupancyGrid:
    """以起始位置为中心的二维占据栅格, OCCUPIED一旦写入不会被FREE覆盖"""

    def __init__(self, center: Tuple[float, float], size: float, resolution: float):
        self.resolution = resolution
        self.n = int(round(size / resolution))
        self.origin = (center[0] - size / 2, center[1] - size / 2)
        self.cells = np.zeros((self.n, self.n), dtype=np.int8)

    def to_cell(self, x: float, y: float) -> Cell:
        return (int(math.floor((x - self.origin[0]) / self.resolution)),
                int(math.floor((y - self.origin[1]) / self.resolution)))

    def to_world(self, cell: Cell) -> Tuple[float, float]:
        return (self.origin[0] + (cell[0] + 0.5) * self.resolution,
                self.origin[1] + (cell[1] + 0.5) * self.resolution)

    def in_bounds(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.n and 0 <= cell[1] < self.n

    def _indices(self, xs: np.ndarray, ys: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        i = np.floor((np.asarray(xs) - self.origin[0]) / self.resolution).astype(int)
        j = np.floor((np.asarray(ys) - self.origin[1]) / self.resolution).astype(int)
        keep = (i >= 0) & (i < self.n) & (j >= 0) & (j < self.n)
        return i[keep], j[keep]

    def mark_occupied(self, xs: np.ndarray, ys: np.ndarray):
        i, j = self._indices(xs, ys)
        self.cells[i, j] = OCCUPIED

    def mark_free(self, xs: np.ndarray, ys: np.ndarray):
        i, j = self._indices(xs, ys)
        cur = self.cells[i, j]
        self.cells[i[cur != OCCUPIED], j[cur != OCCUPIED]] = FREE

    def update(
            self, depth: np.ndarray, valid: np.ndarray, pose: Tuple[float, float, float],
            cam: CameraConfig, carve_range: float = 3.0, occupied_range: float = 5.0
    ):
        """
        用一帧深度更新栅格
        :param valid: 参与建图的像素(排除机械臂自身遮挡)
        :param carve_range: 每一列从机身外到最近命中点之间、且不超过该距离的格子记为FREE
        """
        az, _ = camera_rays(cam)
        X, Y, _ = back_project(depth, pose, cam)
        horizontal = depth / np.cos(az)[None, :]
        hit = valid & (depth < cam.max_range) & (horizontal <= occupied_range)
        self.mark_occupied(X[hit], Y[hit])

        any_hit = valid & (depth < cam.max_range)
        nearest = np.where(any_hit, horizontal, np.inf).min(axis=0)
        seen = valid.any(axis=0)
        x, y, theta = pose
        step = self.resolution / 2
        for c in np.flatnonzero(seen):
            far = min(nearest[c] - self.resolution, carve_range)
            if far <= 0.3:
                continue
            s = np.arange(0.3, far, step)
            yaw = theta + az[c]
            self.mark_free(x + s * math.cos(yaw), y + s * math.sin(yaw))

    def clear_around(self, x: float, y: float, radius: float):
        """机身所在位置必然可通行"""
        r = int(math.ceil(radius / self.resolution))
        ci, cj = self.to_cell(x, y)
        for i in range(ci - r, ci + r + 1):
            for j in range(cj - r, cj + r + 1):
                if self.in_bounds((i, j)) and self.cells[i, j] == UNKNOWN:
                    self.cells[i, j] = FREE

    def passable(self, inflate: float) -> np.ndarray:
        """未知区域视为可通行, 障碍按机身半径膨胀"""
        occ = self.cells == OCCUPIED
        k = int(math.ceil(inflate / self.resolution))
        if k > 0 and occ.any():
            occ = binary_dilation(occ, structure=np.ones((3, 3), bool), iterations=k)
        return ~occ

    def frontier(self) -> np.ndarray:
        """与未知区域相邻的FREE格子"""
        unknown = self.cells == UNKNOWN
        near_unknown = binary_dilation(unknown, structure=np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], bool))
        return (self.cells == FREE) & near_unknown


def astar(
        passable: np.ndarray, start: Cell, is_goal: Callable[[Cell], bool], heuristic: Callable[[Cell], float]
) -> Optional[List[Cell]]:
    """8邻域A*, 返回从start到第一个满足is_goal的格子的路径(含两端), 无解时返回None"""
    n0, n1 = passable.shape
    g = {start: 0.0}
    parent = {start: None}
    heap = [(heuristic(start), 0.0, start)]
    closed = set()
    while heap:
        _, cost, cur = heapq.heappop(heap)
        if cur in closed:
            continue
        if is_goal(cur):
            path = [cur]
            while parent[path[-1]] is not None:
                path.append(parent[path[-1]])
            return path[::-1]
        closed.add(cur)
        for di, dj, step in MOTIONS:
            nxt = (cur[0] + di, cur[1] + dj)
            if not (0 <= nxt[0] < n0 and 0 <= nxt[1] < n1) or not passable[nxt] or nxt in closed:
                continue
            # 斜向移动不能穿过障碍的拐角
            if di and dj and not (passable[cur[0] + di, cur[1]] and passable[cur[0], cur[1] + dj]):
                continue
            new_cost = cost + step
            if new_cost < g.get(nxt, math.inf):
                g[nxt] = new_cost
                parent[nxt] = cur
                heapq.heappush(heap, (new_cost + heuristic(nxt), new_cost, nxt))
    return None


def plan_to_point(
        grid: OccupancyGrid, passable: np.ndarray, start: Cell, target: Tuple[float, float], radius: float
) -> Optional[List[Cell]]:
    """规划到距离target不超过radius的任意可通行格子"""
    tx, ty = target

    def dist(cell: Cell) -> float:
        wx, wy = grid.to_world(cell)
        return math.hypot(wx - tx, wy - ty)

    return astar(
        passable, start,
        is_goal=lambda c: dist(c) <= radius,
        heuristic=lambda c: max(0.0, dist(c) - radius) / grid.resolution,
    )


def nearest_frontier(
        grid: OccupancyGrid, passable: np.ndarray, start: Cell, min_distance: float, blacklist: set
) -> Optional[List[Cell]]:
    """按路径代价最近的前沿格子(与当前位置的直线距离不小于min_distance)"""
    frontier = grid.frontier()
    sx, sy = grid.to_world(start)

    def is_goal(cell: Cell) -> bool:
        if not frontier[cell] or cell in blacklist:
            return False
        wx, wy = grid.to_world(cell)
        return math.hypot(wx - sx, wy - sy) >= min_distance

    return astar(passable, start, is_goal, heuristic=lambda c: 0.0)


def follow_path(
        grid: OccupancyGrid, path: List[Cell], pose: Tuple[float, float, float], lookahead: int = 2
) -> Tuple[Optional[Tuple[float, float]], float]:
    """返回前视路径点及其相对朝向的方位角误差; 路径已走完时返回(None, 0)"""
    x, y, theta = pose
    here = grid.to_cell(x, y)
    if here in path:
        path = path[path.index(here) + 1:]
    if not path:
        return None, 0.0
    wx, wy = grid.to_world(path[min(lookahead, len(path)) - 1])
    return (wx, wy), wrap_angle(math.atan2(wy - y, wx - x) - theta)
