"""Small numpy transformer backend: forward, manual backprop, trainer.

Per grid token: embed the d-channel input, add sinusoidal position codes,
run pre-LN blocks of (multi-head self-attention over the scale's tokens,
single-pattern cross-attention to the prompt, SiLU MLP), then d parallel
binary classifier logits. Cross-attention uses one shared pattern per
layer so the exported maps are exactly the ones used internally and an
override can reproduce a forward bit-for-bit. All math runs in float64
on float32-stored parameters.
"""

import math
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import ContractViolation
from .numerics import FeatureMap, downsample_bilinear, upsample_bilinear
from .predictor import AttentionMaps, PredictorModel, ProbGrid, make_sos
from .textenc import EMBED_DIM, PromptEmbedding, encode_prompt

LN_EPS = 1e-5

DEFAULT_WIDTH = 128
DEFAULT_LAYERS = 4
DEFAULT_HEADS = 4


def init_transformer(seed: int = 0, d: int = 32, e: int = EMBED_DIM,
                     width: int = DEFAULT_WIDTH, layers: int = DEFAULT_LAYERS,
                     heads: int = DEFAULT_HEADS, codec_seed: int = 7,
                     schedule_sides: Tuple[int, ...] = (1, 2, 4, 8, 16)) -> PredictorModel:
    if width % heads:
        raise ContractViolation("width must divide evenly into heads")
    if width % 4:
        raise ContractViolation("width must be a multiple of 4")
    rng = np.random.default_rng(np.random.PCG64(seed))

    def mat(rows, cols, scale=None):
        s = scale if scale is not None else 1.0 / math.sqrt(rows)
        return (rng.standard_normal((rows, cols)) * s).astype(np.float32)

    p: Dict[str, np.ndarray] = {
        "embed_w": mat(d, width),
        "embed_b": np.zeros(width, np.float32),
        "lnf_g": np.ones(width, np.float32),
        "lnf_b": np.zeros(width, np.float32),
        "head_w": mat(width, d, scale=0.02),
        "head_b": np.zeros(d, np.float32),
        "sos_w": mat(e, d),
    }
    for i in range(layers):
        pre = f"l{i}_"
        p[pre + "ln1_g"] = np.ones(width, np.float32)
        p[pre + "ln1_b"] = np.zeros(width, np.float32)
        p[pre + "wq"] = mat(width, width)
        p[pre + "wk"] = mat(width, width)
        p[pre + "wv"] = mat(width, width)
        p[pre + "wo"] = mat(width, width, scale=0.02)
        p[pre + "lnx_g"] = np.ones(width, np.float32)
        p[pre + "lnx_b"] = np.zeros(width, np.float32)
        p[pre + "cq"] = mat(width, width)
        p[pre + "ck"] = mat(e, width)
        p[pre + "cv"] = mat(e, width)
        p[pre + "co"] = mat(width, width, scale=0.02)
        p[pre + "ln2_g"] = np.ones(width, np.float32)
        p[pre + "ln2_b"] = np.zeros(width, np.float32)
        p[pre + "w1"] = mat(width, 4 * width)
        p[pre + "b1"] = np.zeros(4 * width, np.float32)
        p[pre + "w2"] = mat(4 * width, width, scale=0.02)
        p[pre + "b2"] = np.zeros(width, np.float32)
    cfg = {"d": d, "e": e, "width": width, "layers": layers, "heads": heads,
           "seed": int(seed), "codec_seed": int(codec_seed),
           "schedule": [int(s) for s in schedule_sides]}
    return PredictorModel("transformer", cfg, p)


def posenc(h: int, w: int, width: int) -> np.ndarray:
    """Resolution-independent sinusoidal codes on half-pixel-center coords."""
    n4 = width // 4
    freqs = math.pi * (32.0 ** (np.arange(n4) / max(n4 - 1, 1)))
    u = (np.arange(h, dtype=np.float64) + 0.5) / h
    v = (np.arange(w, dtype=np.float64) + 0.5) / w
    uu = np.repeat(u, w)
    vv = np.tile(v, h)
    return np.concatenate([
        np.sin(uu[:, None] * freqs[None, :]),
        np.cos(uu[:, None] * freqs[None, :]),
        np.sin(vv[:, None] * freqs[None, :]),
        np.cos(vv[:, None] * freqs[None, :]),
    ], axis=1)


def _ln_fwd(x, g, b):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xn = xc * inv
    return xn * g + b, (xn, inv, g)


def _ln_bwd(dout, cache):
    xn, inv, g = cache
    dg = (dout * xn).sum(axis=0)
    db = dout.sum(axis=0)
    dxn = dout * g
    dx = inv * (dxn - dxn.mean(axis=1, keepdims=True)
                - xn * (dxn * xn).mean(axis=1, keepdims=True))
    return dx, dg, db


def _softmax(x):
    m = x.max(axis=-1, keepdims=True)
    ex = np.exp(x - m)
    return ex / ex.sum(axis=-1, keepdims=True)


def _softmax_bwd(dout, y):
    return y * (dout - (dout * y).sum(axis=-1, keepdims=True))


def _silu(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return x * s, s


def _silu_bwd(dout, x, s):
    return dout * s * (1.0 + x * (1.0 - s))


def forward(params64: Dict[str, np.ndarray], cfg: dict, x_feat: np.ndarray,
            prompt_vecs: np.ndarray, h: int, w: int,
            override: Optional[List[np.ndarray]] = None,
            want_cache: bool = False):
    """Run the network on (h*w, d) token features; returns logits and maps."""
    width, layers, heads = cfg["width"], cfg["layers"], cfg["heads"]
    hd = width // heads
    n = h * w
    tape: Dict[str, object] = {"x_feat": x_feat, "prompt": prompt_vecs}
    x = x_feat @ params64["embed_w"] + params64["embed_b"] + posenc(h, w, width)
    maps = []
    for i in range(layers):
        pre = f"l{i}_"
        # self-attention
        y, ln1c = _ln_fwd(x, params64[pre + "ln1_g"], params64[pre + "ln1_b"])
        q = y @ params64[pre + "wq"]
        k = y @ params64[pre + "wk"]
        v = y @ params64[pre + "wv"]
        qh = q.reshape(n, heads, hd).transpose(1, 0, 2)
        kh = k.reshape(n, heads, hd).transpose(1, 0, 2)
        vh = v.reshape(n, heads, hd).transpose(1, 0, 2)
        scores = qh @ kh.transpose(0, 2, 1) / math.sqrt(hd)
        attn = _softmax(scores)
        ctx = (attn @ vh).transpose(1, 0, 2).reshape(n, width)
        sa = ctx @ params64[pre + "wo"]
        x1 = x + sa
        # cross-attention: one shared pattern per layer
        y2, lnxc = _ln_fwd(x1, params64[pre + "lnx_g"], params64[pre + "lnx_b"])
        cq = y2 @ params64[pre + "cq"]
        ckv = prompt_vecs @ params64[pre + "ck"]
        cvv = prompt_vecs @ params64[pre + "cv"]
        if override is not None:
            pattern = override[i].astype(np.float64)
            cscores = None
        else:
            cscores = cq @ ckv.T / math.sqrt(width)
            pattern = _softmax(cscores)
        maps.append(pattern)
        cctx = pattern @ cvv
        ca = cctx @ params64[pre + "co"]
        x2 = x1 + ca
        # mlp
        y3, ln2c = _ln_fwd(x2, params64[pre + "ln2_g"], params64[pre + "ln2_b"])
        hpre = y3 @ params64[pre + "w1"] + params64[pre + "b1"]
        hact, hsig = _silu(hpre)
        mlp = hact @ params64[pre + "w2"] + params64[pre + "b2"]
        x3 = x2 + mlp
        if want_cache:
            tape[pre] = dict(ln1c=ln1c, y=y, qh=qh, kh=kh, vh=vh, attn=attn,
                             ctx=ctx, lnxc=lnxc, y2=y2, cq=cq, ckv=ckv, cvv=cvv,
                             pattern=pattern, cctx=cctx, ln2c=ln2c, y3=y3,
                             hpre=hpre, hact=hact, hsig=hsig,
                             overridden=override is not None)
        x = x3
    yf, lnfc = _ln_fwd(x, params64["lnf_g"], params64["lnf_b"])
    logits = yf @ params64["head_w"] + params64["head_b"]
    if want_cache:
        tape["lnfc"] = lnfc
        tape["yf"] = yf
    return logits, maps, tape


def backward(params64: Dict[str, np.ndarray], cfg: dict, tape: Dict[str, object],
             dlogits: np.ndarray, d_sos_entry: bool = False) -> Dict[str, np.ndarray]:
    width, layers, heads = cfg["width"], cfg["layers"], cfg["heads"]
    hd = width // heads
    grads: Dict[str, np.ndarray] = {}
    yf = tape["yf"]
    grads["head_w"] = yf.T @ dlogits
    grads["head_b"] = dlogits.sum(axis=0)
    dyf = dlogits @ params64["head_w"].T
    dx, dg, db = _ln_bwd(dyf, tape["lnfc"])
    grads["lnf_g"] = dg
    grads["lnf_b"] = db
    for i in range(layers - 1, -1, -1):
        pre = f"l{i}_"
        t = tape[pre]
        n = dx.shape[0]
        # mlp
        dmlp = dx
        grads[pre + "w2"] = t["hact"].T @ dmlp
        grads[pre + "b2"] = dmlp.sum(axis=0)
        dhact = dmlp @ params64[pre + "w2"].T
        dhpre = _silu_bwd(dhact, t["hpre"], t["hsig"])
        grads[pre + "w1"] = t["y3"].T @ dhpre
        grads[pre + "b1"] = dhpre.sum(axis=0)
        dy3 = dhpre @ params64[pre + "w1"].T
        dx2, dg, db = _ln_bwd(dy3, t["ln2c"])
        grads[pre + "ln2_g"] = dg
        grads[pre + "ln2_b"] = db
        dx2 = dx2 + dx
        # cross-attention
        dca = dx2
        grads[pre + "co"] = t["cctx"].T @ dca
        dcctx = dca @ params64[pre + "co"].T
        dpattern = dcctx @ t["cvv"].T
        dcvv = t["pattern"].T @ dcctx
        grads[pre + "cv"] = tape["prompt"].T @ dcvv
        if t["overridden"]:
            dcq = np.zeros_like(t["cq"])
            grads[pre + "ck"] = np.zeros_like(params64[pre + "ck"])
        else:
            dcscores = _softmax_bwd(dpattern, t["pattern"]) / math.sqrt(width)
            dcq = dcscores @ t["ckv"]
            dckv = dcscores.T @ t["cq"]
            grads[pre + "ck"] = tape["prompt"].T @ dckv
        grads[pre + "cq"] = t["y2"].T @ dcq
        dy2 = dcq @ params64[pre + "cq"].T
        dx1, dg, db = _ln_bwd(dy2, t["lnxc"])
        grads[pre + "lnx_g"] = dg
        grads[pre + "lnx_b"] = db
        dx1 = dx1 + dx2
        # self-attention
        dsa = dx1
        grads[pre + "wo"] = t["ctx"].T @ dsa
        dctx = (dsa @ params64[pre + "wo"].T).reshape(n, heads, hd).transpose(1, 0, 2)
        dattn = dctx @ t["vh"].transpose(0, 2, 1)
        dvh = t["attn"].transpose(0, 2, 1) @ dctx
        dscores = _softmax_bwd(dattn, t["attn"]) / math.sqrt(hd)
        dqh = dscores @ t["kh"]
        dkh = dscores.transpose(0, 2, 1) @ t["qh"]
        dq = dqh.transpose(1, 0, 2).reshape(n, width)
        dk = dkh.transpose(1, 0, 2).reshape(n, width)
        dv = dvh.transpose(1, 0, 2).reshape(n, width)
        grads[pre + "wq"] = t["y"].T @ dq
        grads[pre + "wk"] = t["y"].T @ dk
        grads[pre + "wv"] = t["y"].T @ dv
        dy = dq @ params64[pre + "wq"].T + dk @ params64[pre + "wk"].T \
            + dv @ params64[pre + "wv"].T
        dxin, dg, db = _ln_bwd(dy, t["ln1c"])
        grads[pre + "ln1_g"] = dg
        grads[pre + "ln1_b"] = db
        dx = dxin + dx1
    grads["embed_w"] = tape["x_feat"].T @ dx
    grads["embed_b"] = dx.sum(axis=0)
    if d_sos_entry:
        dx_feat = dx @ params64["embed_w"].T  # (n, d)
        grads["_dx_feat"] = dx_feat
    return grads


def forward_predict(model: PredictorModel, inp: FeatureMap, prompt: PromptEmbedding,
                    attn_override: Optional[AttentionMaps]) -> Tuple[ProbGrid, AttentionMaps]:
    cfg = model.config
    params64 = {k: v.astype(np.float64) for k, v in model.params.items()}
    x_feat = inp.data.astype(np.float64).reshape(-1, inp.channels)
    override = [m.astype(np.float64) for m in attn_override.layers] \
        if attn_override is not None else None
    logits, maps, _ = forward(params64, cfg, x_feat, prompt.vectors.astype(np.float64),
                              inp.height, inp.width, override=override)
    with np.errstate(over="ignore"):
        p_plus = 1.0 / (1.0 + np.exp(-logits))
    probs = ProbGrid.from_p_plus(
        p_plus.astype(np.float32).reshape(inp.height, inp.width, inp.channels))
    return probs, AttentionMaps(tuple(m.astype(np.float32) for m in maps))


def build_samples(corpus, codec, schedule):
    """Teacher-forcing samples: (input tokens or None-for-SOS, prompt, target bits)."""
    from .codec import encode_image
    from .pyramid import encode_pyramid

    prompts = {}
    samples = []
    for img, caption in corpus:
        if caption not in prompts:
            prompts[caption] = encode_prompt(caption)
        emb = prompts[caption]
        feat = encode_image(img, codec)
        residuals, inputs = encode_pyramid(feat, schedule)
        for k in range(schedule.num_levels):
            h, w = schedule.levels[k]
            if k == 0:
                x = None  # SOS path, depends on sos_w
            else:
                x = np.ascontiguousarray(
                    inputs[k - 1].data.reshape(-1, schedule.feature_dim)
                ).astype(np.float64)
            targets = residuals[k].bits.reshape(-1, schedule.feature_dim)
            samples.append((x, emb, targets.astype(np.float64), h, w))
    return samples


def sample_loss_and_grads(params64, cfg, sample):
    """Per-bit BCE from logits plus parameter grads for one sample."""
    x, emb, targets, h, w = sample
    pv = emb.vectors.astype(np.float64)
    n = h * w
    if x is None:
        mean = emb.mean_vector.astype(np.float64)
        x_feat = np.tile(mean @ params64["sos_w"], (n, 1))
    else:
        x_feat = x
    logits, _, tape = forward(params64, cfg, x_feat, pv, h, w, want_cache=True)
    # stable softplus(z) - t*z
    z = logits
    loss = float(np.mean(np.maximum(z, 0.0) - z * targets + np.log1p(np.exp(-np.abs(z)))))
    n_bits = z.size
    with np.errstate(over="ignore"):
        sig = 1.0 / (1.0 + np.exp(-z))
    dlogits = (sig - targets) / n_bits
    grads = backward(params64, cfg, tape, dlogits, d_sos_entry=(x is None))
    if x is None:
        dx_feat = grads.pop("_dx_feat")
        mean = emb.mean_vector.astype(np.float64)
        grads["sos_w"] = np.outer(mean, dx_feat.sum(axis=0))
    else:
        grads.pop("_dx_feat", None)
        grads["sos_w"] = np.zeros_like(params64["sos_w"])
    return loss, grads, n_bits


def batch_loss(params64, cfg, batch):
    """Bit-weighted mean loss and grads over a batch of samples."""
    total_bits = sum(s[2].size for s in batch)
    agg: Dict[str, np.ndarray] = {}
    loss_sum = 0.0
    for s in batch:
        loss, grads, n_bits = sample_loss_and_grads(params64, cfg, s)
        scale = n_bits / total_bits
        loss_sum += loss * n_bits
        for k, g in grads.items():
            if k in agg:
                agg[k] += g * scale
            else:
                agg[k] = g * scale
    return loss_sum / total_bits, agg


def train_model(model: PredictorModel, corpus, steps: int, lr: float, seed: int,
                log=None, batch_size: int = 8) -> PredictorModel:
    from .codec import make_codec
    from .pyramid import ScaleSchedule

    if steps < 0:
        raise ContractViolation("steps must be >= 0")
    if steps == 0:
        return model
    if not corpus:
        raise ContractViolation("corpus is empty")
    cfg = model.config
    codec = make_codec(int(cfg["codec_seed"]), feature_dim=cfg["d"])
    schedule = ScaleSchedule.from_sides(cfg["schedule"], cfg["d"])
    samples = build_samples(corpus, codec, schedule)
    params64 = {k: v.astype(np.float64) for k, v in model.params.items()}
    vel = {k: np.zeros_like(v) for k, v in params64.items()}
    rng = np.random.default_rng(np.random.PCG64(seed))
    momentum = 0.9
    for step in range(steps):
        idx = rng.integers(0, len(samples), size=batch_size)
        batch = [samples[i] for i in idx]
        loss, grads = batch_loss(params64, cfg, batch)
        for k in params64:
            g = grads.get(k)
            if g is None:
                continue
            vel[k] = momentum * vel[k] - lr * g
            params64[k] = params64[k] + vel[k]
        if log is not None and (step % 50 == 0 or step == steps - 1):
            log(step, loss)
    new_params = {k: v.astype(np.float32) for k, v in params64.items()}
    return PredictorModel("transformer", dict(cfg), new_params)
