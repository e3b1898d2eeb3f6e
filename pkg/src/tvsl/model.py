"""The trainable localization model: parameters, fused forward/backward, inference.

The stage modules (:mod:`detector`, :mod:`conditioner`, :mod:`correspondence`)
expose each step as a plain function.  Training needs the same computation
with gradients, so :func:`loss_and_grads` runs the whole batch through the
shared primitives in :mod:`ops` and back-propagates by hand.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from . import ops
from .conditioner import ConditionedFeatures, ConditioningProjectors, condition
from .correspondence import (AlignedFeatures, CorrespondenceProjectors, NonFiniteLossError,
                             align, collision_mask)
from .detector import DetectionResult, ProjectorSet, detect, project_tokens
from .encoders import PatchTokenSet, PromptContext, SyntheticTextEncoder
from .localization import Heatmap, heatmaps
from .text import ClassVocabulary, TextEmbeddingBank, build_bank

MATRICES = ("P_a", "P_v", "P_f", "P_vc", "P_ac", "P_av", "P_va")
SCALES = ("log_scale_det", "log_scale_cls", "log_scale_av")
MAX_LOG_SCALE = math.log(100.0)


@dataclass
class ModelOptions:
    single_stage: bool = False
    clamp_gate_at_zero: bool = False
    class_collision_mask: bool = False
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)  # (av, cls, mcid)
    detect_threshold: float = 0.5


def init_params(dim: int, rng: np.random.Generator, init: str = "identity",
                noise: float = 0.01, scale_det: float = 10.0, scale_cls: float = 1 / 0.07,
                temperature_av: float = 0.07, prompt_length: int = 0,
                token_dim: int | None = None) -> dict:
    """Fresh parameters.  ``init`` is ``"identity"`` (identity plus small noise) or ``"random"``."""
    D = dim
    p = {}
    for name in MATRICES:
        shape = (D, 2 * D) if name == "P_f" else (D, D)
        if init == "identity":
            base = np.hstack([np.eye(D), np.eye(D)]) / 2 if name == "P_f" else np.eye(D)
            p[name] = base + rng.normal(0.0, noise, size=shape)
        elif init == "random":
            p[name] = rng.normal(0.0, 1.0 / math.sqrt(shape[1]), size=shape)
        else:
            raise ValueError(f"unknown projector init {init!r}")
    p["log_scale_det"] = np.array(math.log(scale_det))
    p["log_scale_cls"] = np.array(math.log(scale_cls))
    p["log_scale_av"] = np.array(math.log(1.0 / temperature_av))
    if prompt_length:
        p["prompt"] = PromptContext.init(prompt_length, token_dim or D, rng).context
    return p


def params_hash(params: dict) -> str:
    h = hashlib.sha256()
    for k in sorted(params):
        h.update(k.encode())
        h.update(np.ascontiguousarray(params[k], dtype=np.float64).tobytes())
    return h.hexdigest()


def clamp_scales(params: dict) -> None:
    for k in SCALES:
        params[k] = np.minimum(params[k], MAX_LOG_SCALE)


# --------------------------------------------------------------------------- batch data

@dataclass
class TokenSample:
    """Encoded sample: frozen-backbone tokens plus its classes."""

    audio: np.ndarray    # (n_a, D)
    visual: np.ndarray   # (n_v, D)
    visual_grid: tuple[int, int]
    audio_grid: tuple[int, int]
    classes: np.ndarray  # (K,) vocabulary indices
    labels: np.ndarray   # (N,)


# --------------------------------------------------------------------------- forward/backward

def _sample_forward(params, T, s: TokenSample, opts: ModelOptions):
    c = {}
    N = T.shape[0]
    clamp = opts.clamp_gate_at_zero
    A = s.audio @ params["P_a"].T
    V = s.visual @ params["P_v"].T
    c["A"], c["V"] = A, V
    out = {}
    if not opts.single_stage:
        x = np.concatenate([A.mean(0), V.mean(0)])
        F = params["P_f"] @ x
        sd = math.exp(float(params["log_scale_det"]))
        scores = ops.cosine(T, F[None, :])
        bce, dz = ops.bce_with_logits(sd * scores, s.labels)
        c.update(x=x, F=F, sd=sd, scores=scores, dz=dz)
        out["mcid"] = float(bce.sum())
    else:
        out["mcid"] = 0.0
    cls = np.arange(N) if opts.single_stage else s.classes
    E = T[cls]
    Vt, gv = ops.cosine_gate(V[None], E, V[None], clamp=clamp)
    At, ga = ops.cosine_gate(A[None], E, A[None], clamp=clamp)
    fv, fa = Vt.mean(1), At.mean(1)
    fvt, fat = fv @ params["P_vc"].T, fa @ params["P_ac"].T
    sc = math.exp(float(params["log_scale_cls"]))
    cos_v = ops.cosine(T[None], fvt[:, None])
    cos_a = ops.cosine(T[None], fat[:, None])
    lv, glv = ops.softmax_cross_entropy(sc * cos_v, cls)
    la, gla = ops.softmax_cross_entropy(sc * cos_a, cls)
    out["cls"] = float(lv.sum() + la.sum())
    gah = fa @ params["P_av"].T
    Vh, u = ops.cosine_gate(Vt, gah, Vt, clamp=clamp)
    gvm = Vh.mean(1)
    gvh = gvm @ params["P_va"].T
    c.update(cls=cls, E=E, Vt=Vt, gv=gv, At=At, ga=ga, fv=fv, fa=fa, fvt=fvt, fat=fat, sc=sc,
             cos_v=cos_v, cos_a=cos_a, glv=glv, gla=gla, gah=gah, Vh=Vh, u=u, gvm=gvm, gvh=gvh)
    return out, c


def _sample_backward(params, T, s: TokenSample, c, opts, w_cls, w_mcid, dgvh, dgah, grads, dT):
    clamp = opts.clamp_gate_at_zero
    A, V = c["A"], c["V"]
    dA = np.zeros_like(A)
    dV = np.zeros_like(V)
    n_v, n_a = V.shape[0], A.shape[0]

    # correspondence block
    grads["P_va"] += dgvh.T @ c["gvm"]
    dVh = np.broadcast_to((dgvh @ params["P_va"])[:, None, :] / n_v, c["Vh"].shape)
    dVt_a, dgah_gate, dVt_c = ops.cosine_gate_backward(c["Vt"], c["gah"], c["Vt"], c["u"], dVh, clamp)
    dVt = dVt_a + dVt_c
    dgah = dgah + dgah_gate
    grads["P_av"] += dgah.T @ c["fa"]
    dfa = dgah @ params["P_av"]

    # class conditioning loss
    sc = c["sc"]
    dlog_v = w_cls * c["glv"]
    dlog_a = w_cls * c["gla"]
    grads["log_scale_cls"] += float(np.sum(dlog_v * c["cos_v"]) + np.sum(dlog_a * c["cos_a"])) * sc
    Tb = np.broadcast_to(T[None], (c["fvt"].shape[0],) + T.shape)
    dT_v, dfvt = ops.cosine_backward(Tb, c["fvt"][:, None], c["cos_v"], sc * dlog_v)
    dT_a, dfat = ops.cosine_backward(Tb, c["fat"][:, None], c["cos_a"], sc * dlog_a)
    dT += dT_v.sum(0) + dT_a.sum(0)
    dfvt, dfat = dfvt[:, 0], dfat[:, 0]
    grads["P_vc"] += dfvt.T @ c["fv"]
    grads["P_ac"] += dfat.T @ c["fa"]
    dVt = dVt + (dfvt @ params["P_vc"])[:, None, :] / n_v
    dfa = dfa + dfat @ params["P_ac"]
    dAt = np.broadcast_to(dfa[:, None, :] / n_a, c["At"].shape)

    # text-gated conditioning
    K = c["E"].shape[0]
    dA_a, dE_a, dA_c = ops.cosine_gate_backward(
        np.broadcast_to(A[None], (K,) + A.shape), c["E"], np.broadcast_to(A[None], (K,) + A.shape),
        c["ga"], dAt, clamp)
    dV_a, dE_v, dV_c = ops.cosine_gate_backward(
        np.broadcast_to(V[None], (K,) + V.shape), c["E"], np.broadcast_to(V[None], (K,) + V.shape),
        c["gv"], dVt, clamp)
    dA += (dA_a + dA_c).sum(0)
    dV += (dV_a + dV_c).sum(0)
    np.add.at(dT, c["cls"], dE_a + dE_v)

    # instance detection
    if not opts.single_stage:
        dz = w_mcid * c["dz"]
        sd = c["sd"]
        grads["log_scale_det"] += float(np.sum(dz * c["scores"])) * sd
        dT_m, dF = ops.cosine_backward(T, c["F"][None, :], c["scores"], sd * dz)
        dT += dT_m
        dF = dF[0]
        grads["P_f"] += np.outer(dF, c["x"])
        dx = params["P_f"].T @ dF
        D = A.shape[1]
        dA += dx[:D] / n_a
        dV += dx[D:] / n_v

    grads["P_a"] += dA.T @ s.audio
    grads["P_v"] += dV.T @ s.visual


def loss_and_grads(params: dict, bank_matrix: np.ndarray, batch, opts: ModelOptions,
                   text_encoder: SyntheticTextEncoder | None = None, need_grads: bool = True):
    """Batch losses and, optionally, gradients for every parameter.

    ``L_mcid`` and ``L_cls`` are averaged over samples; ``L_av`` is one InfoNCE
    over all (sample, source) pairs.  Returns ``(losses, grads)``.
    """
    T = bank_matrix
    B = len(batch)
    w_av, w_cls, w_mcid = opts.loss_weights
    outs, caches = [], []
    for s in batch:
        o, c = _sample_forward(params, T, s, opts)
        outs.append(o)
        caches.append(c)
    l_mcid = sum(o["mcid"] for o in outs) / B
    l_cls = sum(o["cls"] for o in outs) / B
    qv = np.concatenate([c["gvh"] for c in caches])
    qa = np.concatenate([c["gah"] for c in caches])
    sa = math.exp(float(params["log_scale_av"]))
    if qv.shape[0] >= 2:
        mask = None
        if opts.class_collision_mask:
            mask = collision_mask(np.concatenate([c["cls"] for c in caches]))
        l_av, dqv, dqa, dsa = ops.info_nce(qv, qa, sa, mask)
    else:
        l_av, dqv, dqa, dsa = 0.0, np.zeros_like(qv), np.zeros_like(qa), 0.0
    losses = {"av": l_av, "cls": l_cls, "mcid": l_mcid}
    if not all(math.isfinite(v) for v in losses.values()):
        raise NonFiniteLossError(f"non-finite loss: {losses}")
    losses["total"] = w_av * l_av + w_cls * l_cls + w_mcid * l_mcid
    if not need_grads:
        return losses, None

    grads = {k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()}
    grads["log_scale_av"] += w_av * dsa * sa
    dT = np.zeros_like(T)
    offset = 0
    for s, c in zip(batch, caches):
        K = c["gvh"].shape[0]
        sl = slice(offset, offset + K)
        offset += K
        _sample_backward(params, T, s, c, opts, w_cls / B, w_mcid / B,
                         w_av * dqv[sl], w_av * dqa[sl], grads, dT)
    if "prompt" in params:
        if text_encoder is None:
            raise ValueError("a text encoder is required to differentiate the prompt context")
        grads["prompt"] = text_encoder.context_grad(dT, params["prompt"].shape[0])
    grads["_bank"] = dT
    return losses, grads


# --------------------------------------------------------------------------- model facade

class TVSLModel:
    """Parameters plus the frozen text encoder and vocabulary they are used with."""

    def __init__(self, params: dict, text_encoder: SyntheticTextEncoder,
                 vocab: ClassVocabulary, opts: ModelOptions | None = None,
                 template: str = "{}"):
        self.params = params
        self.text_encoder = text_encoder
        self.vocab = vocab
        self.opts = opts or ModelOptions()
        self.template = template
        self._bank = None

    @property
    def prompt(self) -> PromptContext | None:
        if "prompt" not in self.params:
            return None
        return PromptContext(self.params["prompt"])

    def bank(self, zero_shot: bool = False) -> TextEmbeddingBank:
        if self._bank is None or zero_shot:
            bank = build_bank(self.vocab, self.text_encoder, self.prompt, self.template,
                              zero_shot=zero_shot)
            if zero_shot:
                return bank
            self._bank = bank
        return self._bank

    def refresh_bank(self) -> None:
        self._bank = None

    def with_vocabulary(self, vocab: ClassVocabulary) -> "TVSLModel":
        return TVSLModel(self.params, self.text_encoder, vocab, self.opts, self.template)

    # structured views of the parameters
    def projectors(self) -> ProjectorSet:
        return ProjectorSet(self.params["P_a"], self.params["P_v"], self.params["P_f"])

    def conditioning_projectors(self) -> ConditioningProjectors:
        return ConditioningProjectors(self.params["P_vc"], self.params["P_ac"])

    def correspondence_projectors(self) -> CorrespondenceProjectors:
        return CorrespondenceProjectors(self.params["P_av"], self.params["P_va"])

    def scale(self, name: str) -> float:
        return math.exp(float(self.params[f"log_scale_{name}"]))

    def loss_and_grads(self, batch, need_grads: bool = True):
        return loss_and_grads(self.params, self.bank().matrix, batch, self.opts,
                              self.text_encoder, need_grads)

    # ------------------------------------------------------------------ inference

    def project(self, a: PatchTokenSet, v: PatchTokenSet):
        return project_tokens(a, v, self.projectors())

    def detect(self, a: PatchTokenSet, v: PatchTokenSet) -> DetectionResult:
        pa, pv = self.project(a, v)
        return detect(pa, pv, self.bank(), self.projectors(), self.scale("det"),
                      self.opts.detect_threshold)

    def conditioned(self, a: PatchTokenSet, v: PatchTokenSet, classes) -> ConditionedFeatures:
        pa, pv = self.project(a, v)
        return condition(pv, pa, self.bank(), classes, self.conditioning_projectors(),
                         self.opts.clamp_gate_at_zero)

    def aligned(self, a: PatchTokenSet, v: PatchTokenSet, classes) -> AlignedFeatures:
        return align(self.conditioned(a, v, classes), self.correspondence_projectors(),
                     self.opts.clamp_gate_at_zero)

    def localize(self, a: PatchTokenSet, v: PatchTokenSet, classes=None,
                 out_size: tuple[int, int] | None = None) -> Heatmap:
        """Heatmaps for ``classes`` (vocabulary indices); detected classes when omitted."""
        if classes is None:
            classes = self.detect(a, v).selected
        classes = np.asarray(classes, dtype=int)
        if out_size is None:
            out_size = (v.grid[0] * 32, v.grid[1] * 32)
        if classes.size == 0:
            return Heatmap(np.zeros((0,) + tuple(out_size)), classes, v.grid)
        return heatmaps(self.aligned(a, v, classes), out_size)
