"""Bipartite matching and the set-prediction training losses.

Predictions are matched one-to-one against ground truth by a minimum-cost
assignment; losses are computed on matched pairs, while unmatched predictions
are pushed toward the all-negative target (there is no background class).
The detector loss combines focal sigmoid classification with an L1 +
generalized-IoU box loss, normalized by the token count.  The relation loss
replaces the box term with an index-prediction loss: focal softmax
cross-entropy over the subject and object instance axes, normalized by the
query count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from .decoder import RelationOutput
from .detector import DetectorOutput


@dataclass(frozen=True)
class LossWeights:
    """Term weights and focal parameters (DETR-lineage defaults)."""

    lambda_cls: float = 1.0
    lambda_l1: float = 5.0
    lambda_giou: float = 2.0
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0

    def __post_init__(self):
        for name in ("lambda_cls", "lambda_l1", "lambda_giou", "focal_alpha", "focal_gamma"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and nonnegative")


@dataclass(frozen=True)
class Assignment:
    """An injective prediction-to-ground-truth matching of minimum total cost."""

    pairs: tuple[tuple[int, int], ...]
    total_cost: float

    def prediction_for_gt(self, gt_index: int) -> int:
        for i, g in self.pairs:
            if g == gt_index:
                return i
        raise KeyError(f"ground-truth index {gt_index} is unmatched")

    def matched_predictions(self) -> set[int]:
        return {i for i, _ in self.pairs}


def _jv_rectangular(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shortest-augmenting-path assignment for an n x m matrix with n <= m.

    Returns (row_of_col, u, v): the matched row per column (-1 if free) and
    dual potentials with nonnegative reduced costs.
    """
    n, m = a.shape
    u = np.zeros(n)
    v = np.zeros(m)
    row_of_col = np.full(m, -1, dtype=np.int64)
    for i in range(n):
        minv = np.full(m, np.inf)
        way = np.full(m, -2, dtype=np.int64)  # previous column on the alternating path
        used = np.zeros(m, dtype=bool)
        i0 = i
        j0 = -1  # virtual start column
        while True:
            cur = a[i0] - u[i0] - v
            mask = ~used & (cur < minv)
            minv[mask] = cur[mask]
            way[mask] = j0
            cand = np.where(used, np.inf, minv)
            j1 = int(np.argmin(cand))
            delta = cand[j1]
            u[i] += delta
            used_cols = np.nonzero(used)[0]
            if used_cols.size:
                u[row_of_col[used_cols]] += delta
                v[used_cols] -= delta
            minv[~used] -= delta
            used[j1] = True
            j0 = j1
            if row_of_col[j1] < 0:
                break
            i0 = row_of_col[j1]
        while j0 != -1:
            prev = way[j0]
            row_of_col[j0] = i if prev == -1 else row_of_col[prev]
            j0 = prev
    return row_of_col, u, v


def _has_alternative_optimum(
    zero: np.ndarray, col_of_row: np.ndarray, v: np.ndarray, tol: float
) -> bool:
    """Does another minimum-cost matching exist inside the zero-reduced subgraph?

    `zero` is the n x m boolean zero-reduced-cost mask for the solved
    orientation (n rows all matched), `col_of_row` the found matching, and
    `v` the column potentials (exactly zero on unmatched columns).  An
    alternative optimum exists iff the matching admits an alternating cycle,
    or an alternating path that releases a column whose potential is zero and
    claims an unmatched column.
    """
    n, m = zero.shape
    matched_cols = col_of_row
    # adj[r, r'] : row r has a zero edge into row r''s matched column.
    adj = zero[:, matched_cols]
    np.fill_diagonal(adj, False)
    # Cycle detection (Kahn): a directed cycle is a column-preserving swap.
    indeg = adj.sum(axis=0)
    queue = [r for r in range(n) if indeg[r] == 0]
    seen = 0
    while queue:
        r = queue.pop()
        seen += 1
        for r2 in np.nonzero(adj[r])[0]:
            indeg[r2] -= 1
            if indeg[r2] == 0:
                queue.append(int(r2))
    if seen < n:
        return True
    if n == m:
        return False
    # Path: from a row whose own column may be released (v ~ 0) to a row with
    # a zero edge into an unmatched column.
    unmatched = np.ones(m, dtype=bool)
    unmatched[matched_cols] = False
    sinks = zero[:, unmatched].any(axis=1)
    frontier = [r for r in range(n) if v[matched_cols[r]] >= -tol]
    visited = np.zeros(n, dtype=bool)
    for r in frontier:
        visited[r] = True
    while frontier:
        r = frontier.pop()
        if sinks[r]:
            return True
        for r2 in np.nonzero(adj[r])[0]:
            if not visited[r2]:
                visited[r2] = True
                frontier.append(int(r2))
    return False


def _feasible(allowed: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> bool:
    """Does allowed[rows][:, cols] admit a perfect matching?"""
    if rows.size == 0:
        return True
    sub = csr_matrix(allowed[np.ix_(rows, cols)])
    match = maximum_bipartite_matching(sub, perm_type="column")
    return int((match >= 0).sum()) == rows.size


def _lexicographic_tie_break(cost: np.ndarray, tol: float) -> list[tuple[int, int]]:
    """Among all minimum-cost assignments, pick the lexicographically smallest pair set.

    Solves the zero-padded square problem to get complementary-slackness
    duals; every optimal assignment then lives inside the zero-reduced-cost
    subgraph, where a feasibility-checked greedy walks candidate pairs in
    (prediction, ground-truth) order.
    """
    n, m = cost.shape
    size = max(n, m)
    square = np.zeros((size, size))
    square[:n, :m] = cost
    _, u, v = _jv_rectangular(square)
    allowed = (square - u[:, None] - v[None, :]) <= tol
    used_rows = np.zeros(size, dtype=bool)
    used_cols = np.zeros(size, dtype=bool)
    pairs: list[tuple[int, int]] = []
    for i in range(n):
        for j in range(m):
            if used_cols[j] or not allowed[i, j]:
                continue
            rows = np.nonzero(~used_rows)[0]
            rows = rows[rows != i]
            cols = np.nonzero(~used_cols)[0]
            cols = cols[cols != j]
            if _feasible(allowed, rows, cols):
                pairs.append((i, j))
                used_rows[i] = True
                used_cols[j] = True
                break
    return pairs


def hungarian(cost) -> Assignment:
    """Minimum-cost injective assignment of size min(n, m).

    Ties between equal-cost optima break deterministically toward the
    lexicographically smallest set of (prediction, ground-truth) pairs.
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    if np.isnan(c).any():
        raise ValueError("NaN entries in cost matrix")
    if not np.isfinite(c).all():
        raise ValueError("cost matrix entries must be finite")
    n, m = c.shape
    k = min(n, m)
    if k == 0:
        return Assignment((), 0.0)
    a = c if n <= m else c.T
    row_of_col, u, v = _jv_rectangular(a)
    col_of_row = np.full(a.shape[0], -1, dtype=np.int64)
    for j in range(a.shape[1]):
        if row_of_col[j] >= 0:
            col_of_row[row_of_col[j]] = j
    if n <= m:
        pairs = [(r, int(col_of_row[r])) for r in range(n)]
    else:
        pairs = [(int(col_of_row[r]), r) for r in range(m)]
    # Exact ties leave reduced costs within accumulated rounding (~1e-14 at
    # these sizes); genuinely distinct optima sit far above this.
    tol = 1e-12 * max(1.0, float(np.abs(c).max()))
    zero = (a - u[:, None] - v[None, :]) <= tol
    if _has_alternative_optimum(zero, col_of_row, v, tol):
        pairs = _lexicographic_tie_break(c, tol)
    pairs.sort()
    total = math.fsum(c[i, j] for i, j in pairs)
    return Assignment(tuple(pairs), total)


def focal_sigmoid_ce(
    logits: torch.Tensor, targets: torch.Tensor, alpha: float = 0.25, gamma: float = 2.0
) -> torch.Tensor:
    """Mean over classes (last axis) of focal-modulated binary cross-entropy.

    Accepts a single logit vector or a batch of rows; leading axes pass
    through, so a (N, K) input yields one loss per row.
    """
    if logits.shape != targets.shape:
        raise ValueError("logits and targets must have equal shape")
    targets = targets.to(logits.dtype)
    p = torch.sigmoid(logits).clamp(1e-7, 1.0 - 1e-7)
    pos = -alpha * (1.0 - p) ** gamma * torch.log(p)
    neg = -(1.0 - alpha) * p ** gamma * torch.log(1.0 - p)
    return (targets * pos + (1.0 - targets) * neg).mean(dim=-1)


def focal_softmax_ce(
    logits: torch.Tensor, target_index, alpha: float = 0.25, gamma: float = 2.0
) -> torch.Tensor:
    """Focal softmax cross-entropy against one target index per row."""
    logp_all = torch.log_softmax(logits, dim=-1)
    if logits.ndim == 1:
        logp = logp_all[int(target_index)]
    else:
        idx = torch.as_tensor(target_index, dtype=torch.long).reshape(-1, 1)
        logp = logp_all.gather(-1, idx).squeeze(-1)
    pt = torch.exp(logp)
    return -alpha * (1.0 - pt) ** gamma * logp


def _xyxy(boxes: torch.Tensor) -> torch.Tensor:
    half = boxes[..., 2:4] / 2.0
    return torch.cat([boxes[..., 0:2] - half, boxes[..., 0:2] + half], dim=-1)


def generalized_iou_elementwise(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """GIoU between corresponding rows of two (n, 4) cxcywh tensors."""
    a = _xyxy(pred)
    b = _xyxy(gt)
    iw = torch.minimum(a[:, 2], b[:, 2]) - torch.maximum(a[:, 0], b[:, 0])
    ih = torch.minimum(a[:, 3], b[:, 3]) - torch.maximum(a[:, 1], b[:, 1])
    inter = iw.clamp_min(0) * ih.clamp_min(0)
    union = pred[:, 2] * pred[:, 3] + gt[:, 2] * gt[:, 3] - inter
    iou = inter / union
    ew = torch.maximum(a[:, 2], b[:, 2]) - torch.minimum(a[:, 0], b[:, 0])
    eh = torch.maximum(a[:, 3], b[:, 3]) - torch.minimum(a[:, 1], b[:, 1])
    enclose = ew * eh
    return iou - (enclose - union) / enclose


def generalized_iou_pairwise(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """GIoU between every prediction and every ground-truth box, (n,4)x(g,4)->(n,g).

    Corner form, unclipped (training-time convention; sizes are positive so
    corners are well ordered).
    """
    a = _xyxy(pred)
    b = _xyxy(gt)
    iw = torch.minimum(a[:, None, 2], b[None, :, 2]) - torch.maximum(a[:, None, 0], b[None, :, 0])
    ih = torch.minimum(a[:, None, 3], b[None, :, 3]) - torch.maximum(a[:, None, 1], b[None, :, 1])
    inter = iw.clamp_min(0) * ih.clamp_min(0)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    iou = inter / union
    ew = torch.maximum(a[:, None, 2], b[None, :, 2]) - torch.minimum(a[:, None, 0], b[None, :, 0])
    eh = torch.maximum(a[:, None, 3], b[None, :, 3]) - torch.minimum(a[:, None, 1], b[None, :, 1])
    enclose = ew * eh
    return iou - (enclose - union) / enclose


def box_loss(
    pred: torch.Tensor, gt: torch.Tensor, weights: LossWeights = LossWeights()
) -> torch.Tensor:
    """lambda_l1 * L1(cxcywh) + lambda_giou * (1 - GIoU) for one box pair."""
    if float(gt[2]) <= 0.0 or float(gt[3]) <= 0.0:
        raise ValueError("degenerate ground-truth box (zero width or height)")
    l1 = (pred - gt).abs().sum()
    giou = generalized_iou_pairwise(pred.unsqueeze(0), gt.unsqueeze(0))[0, 0]
    return weights.lambda_l1 * l1 + weights.lambda_giou * (1.0 - giou)


def detector_matching(
    output: DetectorOutput,
    gt_boxes: torch.Tensor,
    gt_multihot: torch.Tensor,
    weights: LossWeights = LossWeights(),
) -> Assignment:
    """Hungarian matching of tokens against ground truths by cls + box cost.

    The classification cost is 1 - sigmoid(logit), averaged over each ground
    truth's positive labels; it reuses the very logits the loss trains.
    """
    n = output.class_logits.shape[0]
    g = gt_boxes.shape[0]
    if g > n:
        raise ValueError(f"token budget exceeded: {g} ground truths > {n} tokens")
    if (gt_boxes[:, 2] <= 0).any() or (gt_boxes[:, 3] <= 0).any():
        raise ValueError("degenerate ground-truth box (zero width or height)")
    if (gt_multihot.sum(dim=1) < 1).any():
        raise ValueError("each ground truth needs at least one positive label")
    prob = torch.sigmoid(output.class_logits)  # (N, K)
    counts = gt_multihot.sum(dim=1)
    cls_cost = ((1.0 - prob) @ gt_multihot.T) / counts  # (N, G)
    l1_cost = (output.boxes[:, None, :] - gt_boxes[None, :, :]).abs().sum(dim=-1)
    giou = generalized_iou_pairwise(output.boxes, gt_boxes)
    box_cost = weights.lambda_l1 * l1_cost + weights.lambda_giou * (1.0 - giou)
    cost = weights.lambda_cls * cls_cost + box_cost
    return hungarian(cost.detach().cpu().numpy())


def detector_loss(
    output: DetectorOutput,
    gt_boxes: torch.Tensor,
    gt_multihot: torch.Tensor,
    weights: LossWeights = LossWeights(),
) -> tuple[torch.Tensor, dict[str, float], Assignment]:
    """Hungarian set loss for the detector, normalized by the token count.

    `gt_boxes` is (G, 4) cxcywh and `gt_multihot` is (G, K) over the image's
    text queries.  Matched tokens pay classification plus box loss; unmatched
    tokens pay classification against the all-zero target.
    """
    n = output.class_logits.shape[0]
    assignment = detector_matching(output, gt_boxes, gt_multihot, weights)

    target_matrix = torch.zeros_like(output.class_logits)
    pred_rows = [i for i, _ in assignment.pairs]
    gt_rows = [g for _, g in assignment.pairs]
    if pred_rows:
        target_matrix[pred_rows] = gt_multihot[gt_rows].to(target_matrix.dtype)
    cls_total = focal_sigmoid_ce(
        output.class_logits, target_matrix, weights.focal_alpha, weights.focal_gamma
    ).sum()
    if pred_rows:
        pred_b = output.boxes[pred_rows]
        gt_b = gt_boxes[gt_rows]
        l1 = (pred_b - gt_b).abs().sum()
        giou = generalized_iou_elementwise(pred_b, gt_b)
        box_total = weights.lambda_l1 * l1 + weights.lambda_giou * (1.0 - giou).sum()
    else:
        box_total = torch.zeros((), dtype=cls_total.dtype)
    # lambda_cls weights only the matching cost; the loss itself is L_cls + L_box.
    total = (cls_total + box_total) / n
    breakdown = {
        "od_cls": float(cls_total.detach()) / n,
        "od_box": float(box_total.detach()) / n,
        "od_total": float(total.detach()),
    }
    return total, breakdown, assignment


def ground_truth_indices(assignment: Assignment, subject_gt: int, object_gt: int) -> tuple[int, int]:
    """Map a relation's ground-truth instance indices to their matched prediction indices."""
    return assignment.prediction_for_gt(subject_gt), assignment.prediction_for_gt(object_gt)


@dataclass
class RelationTarget:
    """One merged (subject, object) pair target: multi-hot classes, one-hot indices."""

    class_multihot: torch.Tensor  # (K_rel,)
    subject_index: int
    object_index: int

    def __post_init__(self):
        self.class_multihot = self.class_multihot.to(torch.float64)
        if float(self.class_multihot.sum()) < 1:
            raise ValueError("relation target needs at least one positive class")


def vrd_loss(
    rel_output: RelationOutput,
    targets: list[RelationTarget],
    weights: LossWeights = LossWeights(),
) -> tuple[torch.Tensor, dict[str, float], Assignment]:
    """Hungarian set loss for relation decoding, normalized by the query count.

    Matched queries pay focal sigmoid classification over the relationship
    queries plus the index-prediction loss (focal softmax over the subject
    and object instance axes); unmatched queries pay classification against
    the all-zero target only.
    """
    m = rel_output.class_logits.shape[0]
    t = len(targets)
    if t > m:
        raise ValueError(f"more relation targets ({t}) than queries ({m})")
    alpha, gamma = weights.focal_alpha, weights.focal_gamma
    if t > 0:
        prob = torch.sigmoid(rel_output.class_logits)  # (M, K)
        multihot = torch.stack([tgt.class_multihot for tgt in targets]).to(prob.dtype)  # (T, K)
        cls_cost = ((1.0 - prob) @ multihot.T) / multihot.sum(dim=1)
        p_sub = torch.softmax(rel_output.subject_logits, dim=-1)
        p_obj = torch.softmax(rel_output.object_logits, dim=-1)
        sub_idx = torch.tensor([tgt.subject_index for tgt in targets])
        obj_idx = torch.tensor([tgt.object_index for tgt in targets])
        index_cost = 2.0 - p_sub[:, sub_idx] - p_obj[:, obj_idx]
        cost = weights.lambda_cls * cls_cost + index_cost
        assignment = hungarian(cost.detach().cpu().numpy())
    else:
        assignment = Assignment((), 0.0)

    target_matrix = torch.zeros_like(rel_output.class_logits)
    query_rows = [j for j, _ in assignment.pairs]
    target_rows = [t for _, t in assignment.pairs]
    for j, t in assignment.pairs:
        target_matrix[j] = targets[t].class_multihot.to(target_matrix.dtype)
    cls_total = focal_sigmoid_ce(rel_output.class_logits, target_matrix, alpha, gamma).sum()
    if query_rows:
        sub_targets = [targets[t].subject_index for t in target_rows]
        obj_targets = [targets[t].object_index for t in target_rows]
        ind_total = (
            focal_softmax_ce(rel_output.subject_logits[query_rows], sub_targets, alpha, gamma).sum()
            + focal_softmax_ce(rel_output.object_logits[query_rows], obj_targets, alpha, gamma).sum()
        )
    else:
        ind_total = torch.zeros((), dtype=cls_total.dtype)
    total = (cls_total + ind_total) / m
    breakdown = {
        "vrd_cls": float(cls_total.detach()) / m,
        "vrd_ind": float(ind_total.detach()) / m,
        "vrd_total": float(total.detach()),
    }
    return total, breakdown, assignment
