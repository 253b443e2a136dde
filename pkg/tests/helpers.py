import numpy as np

from mvtn.model import ModelConfig, init_params

KINDS = ["p_dim", "p_dim_rev", "p_dim_plus", "columnar"]


def tiny_config(**kw):
    base = dict(
        d_model=16, stages=2, heads=2, feature_dim=8, seq_len=3, num_classes=3, dropout=0.0, seed=0
    )
    base.update(kw)
    return ModelConfig(**base)


def randomize(params, seed=0, scale=0.2):
    """Give every bias, gain and token a nonzero random value (init leaves many at 0 or 1)."""
    rng = np.random.default_rng(seed)
    for name, t in params.named_tensors():
        if t.ndim == 1:
            base = 1.0 if name.endswith("gain") else 0.0
            t.data[:] = base + rng.normal(scale=scale, size=t.shape)
    return params


def oracle_weights(params):
    """Raw-array dict in the layout expected by oracles.vanilla_encoder_logits."""
    w = {
        "norm_g": params.norm_gain.data, "norm_b": params.norm_bias.data,
        "head_w": params.head_w.data, "head_b": params.head_b.data, "stages": [],
    }
    if params.embed_w is not None:
        w.update(embed_w=params.embed_w.data, embed_b=params.embed_b.data, class_token=params.class_token.data)
    for s in params.stages:
        a = s.attn
        w["stages"].append(dict(
            ln1_g=s.ln1_gain.data, ln1_b=s.ln1_bias.data,
            q_w=a.w_q.data, q_b=a.b_q.data, k_w=a.w_k.data, k_b=a.b_k.data,
            v_w=a.w_v.data, v_b=a.b_v.data, o_w=a.w_o.data, o_b=a.b_o.data,
            ln2_g=s.ln2_gain.data, ln2_b=s.ln2_bias.data,
            f1_w=s.ffn_w1.data, f1_b=s.ffn_b1.data, f2_w=s.ffn_w2.data, f2_b=s.ffn_b2.data,
        ))
    return w


def random_params(config, seed=0):
    return randomize(init_params(config), seed)
