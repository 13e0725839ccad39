"""Fidelity critics and candidate selection.

Four pixel metrics (MSE, SSIM, PSNR, EMD), two embedding distances, and two
model-judge modes, all normalized so that a smaller score always means a more
faithful reconstruction. Selection is the argmin of the normalized score with
ties broken by generation ordinal.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.signal import correlate2d

from .errors import (
    AllCandidatesFailedError,
    CriticUnavailableError,
    DimensionMismatchError,
    RecodeError,
)
from .gateway import Gateway, ImagePart, ModelRequest, TextPart
from .images import RasterImage, encode_png, luma_plane, resize_bilinear
from .prompts import PromptLibrary, build_prompt, parse_verdict
from .types import Candidate, CriticScore, HIGHER_BETTER, LOWER_BETTER

MSE = "mse"
SSIM = "ssim"
PSNR = "psnr"
EMD = "emd"
EMBED_L2 = "embed_l2"
EMBED_COS = "embed_cos"
JUDGE_PAIRWISE = "judge_pairwise"
JUDGE_COMPARATIVE = "judge_comparative"

ORIENTATIONS = {
    MSE: LOWER_BETTER,
    EMD: LOWER_BETTER,
    EMBED_L2: LOWER_BETTER,
    SSIM: HIGHER_BETTER,
    PSNR: HIGHER_BETTER,
    EMBED_COS: HIGHER_BETTER,
    JUDGE_PAIRWISE: HIGHER_BETTER,
    JUDGE_COMPARATIVE: HIGHER_BETTER,
}

PIXEL_KINDS = (MSE, SSIM, PSNR, EMD)
GATEWAY_KINDS = (EMBED_L2, EMBED_COS, JUDGE_PAIRWISE, JUDGE_COMPARATIVE)
ALL_KINDS = PIXEL_KINDS + GATEWAY_KINDS

# SSIM constants for 8-bit dynamic range, 11x11 Gaussian window, sigma 1.5.
_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_C1 = (0.01 * 255) ** 2
_SSIM_C2 = (0.03 * 255) ** 2

_RANKING_RE = re.compile(r"Final ranking:\s*\[\[\s*([0-9,\s]+?)\s*\]\]")

PEAK_SQ = 255.0**2


def make_score(kind: str, raw: float) -> CriticScore:
    """Attach the fixed orientation for a kind and derive the normalized value."""
    orientation = ORIENTATIONS[kind]
    normalized = raw if orientation == LOWER_BETTER else -raw
    return CriticScore(kind=kind, raw=raw, orientation=orientation, normalized=normalized)


def failure_score(kind: str) -> CriticScore:
    """Sentinel for unrenderable candidates: ranks strictly worst."""
    raw = math.inf if ORIENTATIONS[kind] == LOWER_BETTER else -math.inf
    return CriticScore(kind=kind, raw=raw, orientation=ORIENTATIONS[kind], normalized=math.inf)


def align(original: RasterImage, candidate: RasterImage) -> tuple[RasterImage, RasterImage]:
    """Resize the candidate to the original's dimensions; the original is untouched."""
    if (candidate.width, candidate.height) == (original.width, original.height):
        return original, candidate
    return original, resize_bilinear(candidate, original.width, original.height)


def _require_same_dims(a: RasterImage, b: RasterImage) -> None:
    if (a.width, a.height) != (b.width, b.height):
        raise DimensionMismatchError(
            f"images differ in size: {a.width}x{a.height} vs {b.width}x{b.height}"
        )


def mse(a: RasterImage, b: RasterImage) -> float:
    """Mean squared 8-bit difference over all pixels and all three channels."""
    _require_same_dims(a, b)
    da = a.to_array().astype(np.float64)
    db = b.to_array().astype(np.float64)
    return float(np.mean((da - db) ** 2))


def psnr(a: RasterImage, b: RasterImage) -> float:
    """10*log10(255^2 / mse); identical images yield +inf, which ranks strictly best."""
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(PEAK_SQ / err)


def _gaussian_kernel_1d(length: int, sigma: float) -> np.ndarray:
    offsets = np.arange(length, dtype=np.float64) - (length - 1) / 2.0
    kernel = np.exp(-(offsets**2) / (2.0 * sigma**2))
    return kernel / kernel.sum()


def ssim(a: RasterImage, b: RasterImage) -> float:
    """Mean local structural similarity over Gaussian-weighted windows.

    Computed on the quantized grayscale planes; windows are 11x11 (sigma 1.5)
    and only fully interior positions contribute. Images smaller than the
    window are scored with a single window spanning the whole image.
    """
    _require_same_dims(a, b)
    x = luma_plane(a)
    y = luma_plane(b)
    h, w = x.shape

    if h < _SSIM_WINDOW or w < _SSIM_WINDOW:
        kh = _gaussian_kernel_1d(h, _SSIM_SIGMA)
        kw = _gaussian_kernel_1d(w, _SSIM_SIGMA)
        weights = np.outer(kh, kw)
        mu_x = float(np.sum(weights * x))
        mu_y = float(np.sum(weights * y))
        var_x = float(np.sum(weights * x * x)) - mu_x**2
        var_y = float(np.sum(weights * y * y)) - mu_y**2
        cov = float(np.sum(weights * x * y)) - mu_x * mu_y
        return ((2 * mu_x * mu_y + _SSIM_C1) * (2 * cov + _SSIM_C2)) / (
            (mu_x**2 + mu_y**2 + _SSIM_C1) * (var_x + var_y + _SSIM_C2)
        )

    k = _gaussian_kernel_1d(_SSIM_WINDOW, _SSIM_SIGMA)
    row = k[None, :]
    col = k[:, None]

    def blur(img: np.ndarray) -> np.ndarray:
        return correlate2d(correlate2d(img, row, mode="valid"), col, mode="valid")

    mu_x = blur(x)
    mu_y = blur(y)
    var_x = blur(x * x) - mu_x**2
    var_y = blur(y * y) - mu_y**2
    cov = blur(x * y) - mu_x * mu_y
    ssim_map = ((2 * mu_x * mu_y + _SSIM_C1) * (2 * cov + _SSIM_C2)) / (
        (mu_x**2 + mu_y**2 + _SSIM_C1) * (var_x + var_y + _SSIM_C2)
    )
    return float(np.mean(ssim_map))


def histogram_emd(weights_a: np.ndarray, weights_b: np.ndarray) -> float:
    """1-D earth mover's distance between two equal-mass histograms.

    Equals sum_i |CDF_a(i) - CDF_b(i)| in mass units; callers normalize when
    they want a scale-free value. Exact for integer masses.
    """
    wa = np.asarray(weights_a, dtype=np.float64)
    wb = np.asarray(weights_b, dtype=np.float64)
    if wa.shape != wb.shape:
        raise DimensionMismatchError("histograms must have the same number of bins")
    if abs(float(wa.sum()) - float(wb.sum())) > 1e-9 * max(1.0, float(wa.sum())):
        raise ValueError("histograms must carry equal total mass")
    return float(np.sum(np.abs(np.cumsum(wa) - np.cumsum(wb))))


def _intensity_histogram(img: RasterImage) -> np.ndarray:
    gray = luma_plane(img).astype(np.int64).ravel()
    counts = np.bincount(gray, minlength=256).astype(np.float64)
    return counts / counts.sum()


def emd(a: RasterImage, b: RasterImage) -> float:
    """EMD between 256-bin normalized grayscale intensity histograms, in [0, 255].

    Histogram-level, so the two images may have different dimensions.
    """
    return histogram_emd(_intensity_histogram(a), _intensity_histogram(b))


@dataclass
class CriticContext:
    """Wiring for gateway-backed critics."""

    gateway: Gateway
    judge_model: str = "multimodal-default"
    embedding_model: str = "embedding-default"
    max_output_tokens: int = 8192
    prompt_library: PromptLibrary | None = None


def embedding_distance(
    a: RasterImage, b: RasterImage, variant: str, ctx: CriticContext
) -> float:
    """L2 distance (lower better) or cosine similarity (higher better) of image embeddings."""
    if variant not in (EMBED_L2, EMBED_COS):
        raise ValueError(f"unknown embedding variant {variant!r}")
    try:
        va = np.asarray(ctx.gateway.embed_image(a, ctx.embedding_model).values, dtype=np.float64)
        vb = np.asarray(ctx.gateway.embed_image(b, ctx.embedding_model).values, dtype=np.float64)
    except RecodeError as exc:
        raise CriticUnavailableError(f"embedding critic unavailable: {exc}") from exc
    if va.shape != vb.shape:
        raise CriticUnavailableError("embedding vectors differ in length")
    if variant == EMBED_L2:
        return float(np.linalg.norm(va - vb))
    norm_a = float(np.linalg.norm(va))
    norm_b = float(np.linalg.norm(vb))
    if norm_a == 0.0 or norm_b == 0.0:
        raise CriticUnavailableError("cosine similarity undefined for a zero-norm embedding")
    return float(np.dot(va, vb) / (norm_a * norm_b))


def judge_pairwise(original: RasterImage, candidate: RasterImage, ctx: CriticContext) -> float:
    """One judge call comparing original vs candidate; returns the final verdict in [1, 5]."""
    prompt = build_prompt("judge_pairwise", library=ctx.prompt_library)
    req = ModelRequest(
        model_id=ctx.judge_model,
        parts=(TextPart(prompt), ImagePart(encode_png(original)), ImagePart(encode_png(candidate))),
        temperature=0.0,
        max_output_tokens=ctx.max_output_tokens,
    )
    try:
        resp = ctx.gateway.complete(req)
    except RecodeError as exc:
        raise CriticUnavailableError(f"judge call failed: {exc}") from exc
    if not resp.text:
        raise CriticUnavailableError(f"judge returned no text (finish={resp.finish_class})")
    try:
        return parse_verdict(resp.text).final
    except RecodeError as exc:
        raise CriticUnavailableError(f"unparseable judge verdict: {exc}; raw response: {resp.text[:500]}") from exc


def judge_comparative(
    original: RasterImage, candidates: list[RasterImage], ctx: CriticContext
) -> list[int]:
    """Rank candidate images against the original in one model call.

    Returns 0-based candidate indices, best first. A single candidate wins by
    default without a call.
    """
    if not candidates:
        raise CriticUnavailableError("no candidate images to rank")
    if len(candidates) == 1:
        return [0]
    prompt = build_prompt(
        "judge_comparative", {"candidate_count": len(candidates)}, library=ctx.prompt_library
    )
    parts: list[TextPart | ImagePart] = [TextPart(prompt), ImagePart(encode_png(original))]
    for idx, cand in enumerate(candidates, start=1):
        parts.append(TextPart(f"Candidate {idx}:"))
        parts.append(ImagePart(encode_png(cand)))
    req = ModelRequest(
        model_id=ctx.judge_model,
        parts=tuple(parts),
        temperature=0.0,
        max_output_tokens=ctx.max_output_tokens,
    )
    try:
        resp = ctx.gateway.complete(req)
    except RecodeError as exc:
        raise CriticUnavailableError(f"judge call failed: {exc}") from exc
    match = _RANKING_RE.findall(resp.text or "")
    if not match:
        raise CriticUnavailableError(f"no 'Final ranking: [[...]]' line; raw response: {resp.text[:500]}")
    try:
        order = [int(tok) for tok in match[-1].replace(" ", "").split(",") if tok]
    except ValueError as exc:
        raise CriticUnavailableError(f"unparseable ranking: {match[-1]!r}") from exc
    if sorted(order) != list(range(1, len(candidates) + 1)):
        raise CriticUnavailableError(
            f"ranking {order} is not a permutation of 1..{len(candidates)}"
        )
    return [i - 1 for i in order]


def score_candidates(
    original: RasterImage,
    candidates: list[Candidate],
    kind: str,
    ctx: CriticContext | None = None,
) -> list[Candidate]:
    """Score every candidate with one critic kind.

    Candidates without an ok rendering get the +inf sentinel. A gateway-backed
    critic that fails for one candidate marks just that candidate as a failure
    so the round can still select among the rest. Existing scores for the same
    kind are reused (the refinement seed keeps its score without extra calls).
    """
    if kind not in ALL_KINDS:
        raise ValueError(f"unknown critic kind {kind!r}")
    if kind in GATEWAY_KINDS and ctx is None:
        raise CriticUnavailableError(f"critic {kind!r} needs a configured gateway")

    if kind == JUDGE_COMPARATIVE:
        return _score_comparative(original, candidates, ctx)  # type: ignore[arg-type]

    scored: list[Candidate] = []
    for cand in candidates:
        if kind in cand.scores:
            scored.append(cand)
            continue
        if not cand.rendering.is_ok:
            scored.append(cand.with_score(failure_score(kind)))
            continue
        assert cand.rendering.image is not None
        _, aligned = align(original, cand.rendering.image)
        try:
            if kind == MSE:
                raw = mse(original, aligned)
            elif kind == SSIM:
                raw = ssim(original, aligned)
            elif kind == PSNR:
                raw = psnr(original, aligned)
            elif kind == EMD:
                raw = emd(original, aligned)
            elif kind in (EMBED_L2, EMBED_COS):
                raw = embedding_distance(original, aligned, kind, ctx)  # type: ignore[arg-type]
            else:
                raw = judge_pairwise(original, aligned, ctx)  # type: ignore[arg-type]
            scored.append(cand.with_score(make_score(kind, raw)))
        except CriticUnavailableError:
            scored.append(cand.with_score(failure_score(kind)))
    return scored


def _score_comparative(
    original: RasterImage, candidates: list[Candidate], ctx: CriticContext
) -> list[Candidate]:
    # Only renderable candidates enter the single ranking call; the reverse
    # rank becomes the raw score so argmin-of-normalized picks the ranking's
    # winner.
    ok_indices = [i for i, c in enumerate(candidates) if c.rendering.is_ok]
    images = [candidates[i].rendering.image for i in ok_indices]
    scored = list(candidates)
    if ok_indices:
        aligned = [align(original, img)[1] for img in images]  # type: ignore[arg-type]
        order = judge_comparative(original, aligned, ctx)
        n = len(ok_indices)
        for position, local_idx in enumerate(order):
            cand_idx = ok_indices[local_idx]
            scored[cand_idx] = scored[cand_idx].with_score(
                make_score(JUDGE_COMPARATIVE, float(n - position))
            )
    for i, cand in enumerate(scored):
        if not cand.rendering.is_ok and JUDGE_COMPARATIVE not in cand.scores:
            scored[i] = cand.with_score(failure_score(JUDGE_COMPARATIVE))
    return scored


def select_best(candidates: Sequence[Candidate], kind: str) -> int:
    """Index of the candidate minimizing the normalized score; ties go to the lowest ordinal.

    Candidates that failed to render (or could not be scored) carry the +inf
    sentinel and are never selected. Raises when nothing is selectable.
    """
    best_idx: int | None = None
    best_key: tuple[float, int] | None = None
    for idx, cand in enumerate(candidates):
        score = cand.scores.get(kind)
        normalized = math.inf
        if cand.rendering.is_ok and score is not None:
            normalized = score.normalized
        if math.isinf(normalized) and normalized > 0:
            continue
        key = (normalized, cand.ordinal)
        if best_key is None or key < best_key:
            best_key = key
            best_idx = idx
    if best_idx is None:
        raise AllCandidatesFailedError("no candidate with a usable rendering and score")
    return best_idx
