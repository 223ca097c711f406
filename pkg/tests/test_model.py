import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from bfmd.errors import AllPadded, NonFiniteLoss, SequenceTooLong, ShapeMismatch
from bfmd.model import (
    ForwardOutput,
    ModelConfig,
    MultimodalFusion,
    SemanticHead,
    ShotCaptioner,
    TokenRefiner,
    Trainer,
    batch_losses,
    collate,
    compute_losses,
    desk_config,
    load_checkpoint,
    save_checkpoint,
    tiny_config,
)
from bfmd.model.captioner import DecoderLayer
from bfmd.model.gradcheck import random_batch
from bfmd.pipeline.synth import synth_generate
from bfmd.pipeline.vocab import BOS, EOS

torch.set_default_dtype(torch.float32)


def tiny_model(seed=0, **kw):
    torch.manual_seed(seed)
    return ShotCaptioner(tiny_config(**kw)).double()


def ln(v, eps=1e-5):
    v = np.asarray(v, dtype=np.float64)
    mu = v.mean(-1, keepdims=True)
    return (v - mu) / np.sqrt(v.var(-1, keepdims=True) + eps)


def gelu(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1 + np.vectorize(math.erf)(x / math.sqrt(2)))


def set_linear(lin, w, b=None):
    with torch.no_grad():
        lin.weight.copy_(torch.tensor(w, dtype=lin.weight.dtype))
        if b is not None:
            lin.bias.copy_(torch.tensor(b, dtype=lin.bias.dtype))


# -- backbone -----------------------------------------------------------


def test_token_count_formula():
    assert ModelConfig(vocab_size=10).n_tokens == 8 * 14 * 14 == 1568
    assert desk_config(10).n_tokens == 4 * 7 * 7


def test_backbone_shape_and_errors():
    cfg = tiny_config()
    m = tiny_model()
    clip = torch.zeros(2, cfg.frames, cfg.image_size, cfg.image_size, 3, dtype=torch.uint8)
    assert m.encode_video(clip).shape == (2, cfg.n_tokens, cfg.d_model)
    # zero clip with zero-bias embedding: zero tokens before attention
    assert torch.count_nonzero(m.backbone.embed_patches(clip)) == 0
    with pytest.raises(ShapeMismatch):
        m.encode_video(torch.zeros(1, cfg.frames, 16, 16, 3, dtype=torch.uint8))


def test_backbone_deterministic_and_prefix_split():
    m = tiny_model()
    clip = torch.randint(0, 255, (1, 2, 32, 32, 3), dtype=torch.uint8)
    a, b = m.encode_video(clip), m.encode_video(clip)
    assert torch.equal(a, b)
    assert torch.equal(m.encode_video(m.backbone.frozen_prefix(clip), is_prefix=True), a)


# -- token refiner ------------------------------------------------------


def test_refiner_zero_output_projection_is_layernorm():
    torch.manual_seed(1)
    r = TokenRefiner(8, 2).double()
    torch.nn.init.zeros_(r.attn[0].w_o.weight)
    x = torch.randn(2, 5, 8, dtype=torch.float64)
    assert np.allclose(r(x).detach().numpy(), ln(x.numpy()), atol=1e-12)


def test_refiner_attention_rows_sum_to_one():
    torch.manual_seed(2)
    r = TokenRefiner(8, 2).double()
    r.attn[0].record = True
    r(torch.randn(3, 7, 8, dtype=torch.float64))
    p = r.attn[0].last_probs
    assert torch.allclose(p.sum(-1), torch.ones_like(p.sum(-1)), atol=1e-6)


def test_refiner_single_token_hand_case():
    # One token: attention weight 1, so MHSA(x) = W_O W_V x.
    r = TokenRefiner(2, 1).double()
    a = r.attn[0]
    set_linear(a.w_q, [[3.0, -1.0], [0.5, 2.0]])
    set_linear(a.w_k, [[1.0, 1.0], [-2.0, 0.0]])
    set_linear(a.w_v, [[1.0, 0.0], [0.0, 2.0]])
    set_linear(a.w_o, [[0.5, 0.0], [0.0, 0.5]])
    x = torch.tensor([[[1.0, 3.0]]], dtype=torch.float64)
    # x + [0.5, 3.0] = [1.5, 6.0]; mean 3.75, deviations -/+2.25, variance 5.0625
    d = 2.25 / math.sqrt(5.0625 + 1e-5)
    assert np.allclose(r(x).detach().numpy(), [[[-d, d]]], atol=1e-12)


# -- modality encoding and fusion --------------------------------------


def test_modality_tokens_shape_zero_and_permutation():
    cfg = desk_config(10)
    torch.manual_seed(0)
    m = ShotCaptioner(cfg)
    T, kp = cfg.frames, cfg.n_keypoints
    pos, pose, sh = torch.randn(1, T, 4), torch.randn(1, T, 4 * kp), torch.randn(1, T, 2)
    out = m.modality(pos, pose, sh)
    assert out.shape == (1, 3 * T, cfg.d_model) == (1, 48, 64)
    zero = m.modality(torch.zeros_like(pos), torch.zeros_like(pose), torch.zeros_like(sh))
    assert torch.count_nonzero(zero) == 0
    perm = torch.randperm(T)
    out_p = m.modality(pos[:, perm], pose[:, perm], sh[:, perm])
    for blk in range(3):
        assert torch.equal(out_p[:, blk * T : (blk + 1) * T], out[:, blk * T : (blk + 1) * T][:, perm])


def test_fusion_alpha_zero_is_identity():
    m = tiny_model()
    grid = torch.randn(2, 4, 8, dtype=torch.float64)
    f_s = torch.randn(2, 6, 8, dtype=torch.float64)
    mask = torch.zeros(2, 6, dtype=torch.bool)
    assert torch.equal(m.fuse(grid, f_s, mask, alpha=0.0), grid)


def test_fusion_default_alpha_scales_delta():
    m = tiny_model()
    grid = torch.randn(1, 4, 8, dtype=torch.float64)
    f_s = torch.randn(1, 6, 8, dtype=torch.float64)
    mask = torch.zeros(1, 6, dtype=torch.bool)
    fu = m.fusion
    e = f_s + fu.token_embed
    delta = fu.cross_attn(grid, fu.self_attn(e, e) + e)
    assert m.cfg.alpha == 0.2
    assert torch.allclose(m.fuse(grid, f_s, mask), grid + 0.2 * delta, atol=1e-12)


def test_fusion_single_token_hand_case():
    # T=1 with pose and shuttle masked leaves one modality key for one visual query.
    cfg = tiny_config(d_model=2, heads=1, frames=1, tubelet=1)
    fu = MultimodalFusion(cfg).double()
    sa, ca = fu.self_attn, fu.cross_attn
    set_linear(sa.w_v, [[1.0, 0.0], [1.0, 1.0]])
    set_linear(sa.w_o, [[2.0, 0.0], [0.0, 1.0]])
    set_linear(ca.w_v, [[0.0, 1.0], [1.0, 0.0]])
    set_linear(ca.w_o, [[1.0, 0.0], [0.0, -1.0]])
    g = torch.tensor([[[1.0, -1.0]]], dtype=torch.float64)
    f = torch.tensor([[[2.0, 1.0], [9.0, 9.0], [9.0, 9.0]]], dtype=torch.float64)
    mask = torch.tensor([[False, True, True]])
    # M_s = W_O W_V f + f = [4, 3] + [2, 1] = [6, 4]; delta = W_O' W_V' M_s = [4, -6]
    out = fu(g, f, mask, 0.2)
    assert np.allclose(out.detach().numpy(), [[[1.0 + 0.8, -1.0 - 1.2]]], atol=1e-12)


def test_masked_modality_rows_get_zero_weight():
    m = tiny_model()
    m.fusion.cross_attn.record = True
    m.fusion.self_attn.record = True
    grid = torch.randn(2, 4, 8, dtype=torch.float64)
    f_s = torch.randn(2, 6, 8, dtype=torch.float64)
    mask = torch.zeros(2, 6, dtype=torch.bool)
    mask[0, [1, 4]] = True
    m.fuse(grid, f_s, mask)
    for attn in (m.fusion.cross_attn, m.fusion.self_attn):
        p = attn.last_probs
        assert torch.all(p[0, :, :, [1, 4]] == 0)
        assert torch.allclose(p.sum(-1), torch.ones_like(p.sum(-1)), atol=1e-6)


def test_masked_modality_values_do_not_matter():
    m = tiny_model()
    b = random_batch(m.cfg)
    base = m(b.inputs, b.dec_in).logits
    b.inputs.shuttle[:, -1] = 1e6  # last shuttle token is masked in random_batch
    assert torch.equal(m(b.inputs, b.dec_in).logits, base)


# -- decoder ------------------------------------------------------------


def _np_attn(q_in, kv, a, causal):
    wq, wk, wv, wo = (x.weight.detach().numpy() for x in (a.w_q, a.w_k, a.w_v, a.w_o))
    q, k, v = q_in @ wq.T, kv @ wk.T, kv @ wv.T
    s = q @ k.T / math.sqrt(q.shape[-1])
    if causal:
        s = np.where(np.triu(np.ones_like(s), 1) > 0, -np.inf, s)
    p = np.exp(s - s.max(-1, keepdims=True))
    p /= p.sum(-1, keepdims=True)
    return (p @ v) @ wo.T


def test_decoder_layer_matches_hand_evaluation():
    torch.manual_seed(5)
    layer = DecoderLayer(2, 1, 2).double()
    for p in layer.parameters():
        torch.nn.init.uniform_(p, -1, 1)
    for n in (layer.norm1, layer.norm2, layer.norm3):
        torch.nn.init.ones_(n.weight)
        torch.nn.init.zeros_(n.bias)
    x = np.array([[0.3, -0.7], [1.1, 0.4]])
    mem = np.array([[0.5, 0.5], [-1.0, 2.0], [0.2, 0.1]])
    h = ln(x + _np_attn(x, x, layer.self_attn, True))
    h = ln(h + _np_attn(h, mem, layer.cross_attn, False))
    f1, f2 = layer.ffn.fc1, layer.ffn.fc2
    ff = gelu(h @ f1.weight.detach().numpy().T + f1.bias.detach().numpy())
    ff = ff @ f2.weight.detach().numpy().T + f2.bias.detach().numpy()
    want = ln(h + ff)
    got = layer(torch.tensor(x)[None], torch.tensor(mem)[None])[0].detach().numpy()
    assert np.allclose(got, want, atol=1e-12)

    # vocabulary projection to V=3
    w_out = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, -1.0]])
    lin = torch.nn.Linear(2, 3).double()
    set_linear(lin, w_out, [0.1, 0.2, 0.3])
    logits = lin(torch.tensor(got)).detach().numpy()
    assert np.allclose(logits, want @ w_out.T + [0.1, 0.2, 0.3], atol=1e-12)


def test_decoder_bos_only_shape_and_too_long():
    m = tiny_model()
    b = random_batch(m.cfg)
    out = m(b.inputs, torch.full((2, 1), BOS))
    assert out.logits.shape == (2, 1, m.cfg.vocab_size)
    with pytest.raises(SequenceTooLong):
        m(b.inputs, torch.full((2, m.cfg.max_len + 1), 5))


@pytest.mark.parametrize("pooling", ["prefix", "full"])
def test_causality_exact(pooling):
    m = tiny_model(sf_pooling=pooling)
    b = random_batch(m.cfg)
    tokens = torch.tensor([[BOS, 5, 6, 7, 8], [BOS, 9, 4, 5, 6]])
    base = m(b.inputs, tokens).logits
    for t in range(tokens.shape[1] - 1):
        pert = tokens.clone()
        pert[:, t + 1 :] = 10
        got = m(b.inputs, pert).logits
        same = torch.equal(got[:, : t + 1], base[:, : t + 1])
        # broadcast pooling mixes later tokens into every position
        assert same if pooling == "prefix" else not same


# -- semantic feedback --------------------------------------------------


def _hand_head(beta):
    h = SemanticHead(2, 2, beta).double()
    set_linear(h.w_s, [[1.0, 0.0], [0.0, -1.0]])
    set_linear(h.w_1, [[1.0, 0.0], [0.0, 1.0]])
    set_linear(h.w_2, [[1.0, 0.0], [0.0, 2.0]])
    return h


def test_semantic_feedback_hand_case():
    head = _hand_head(0.5)
    H = torch.tensor([[[1.0, 0.0], [3.0, 2.0], [7.0, 7.0]]], dtype=torch.float64)
    valid = torch.tensor([[True, True, False]])
    out, S, P, z, dh = head(H, valid)
    # z = mean of the two non-pad rows; S = [2, -1]; P = sigmoid(S)
    sig = lambda v: 1 / (1 + math.exp(-v))
    p = np.array([sig(2.0), sig(-1.0)])
    delta = np.array([gelu(p[0]), 2 * gelu(p[1])])
    assert np.allclose(z.numpy(), [[2.0, 1.0]])
    assert np.allclose(S.detach().numpy(), [[2.0, -1.0]])
    assert np.allclose(P.detach().numpy(), [p], atol=1e-12)
    assert np.allclose(dh.detach().numpy(), [delta], atol=1e-12)
    assert np.allclose(out.detach().numpy(), H.numpy() + 0.5 * delta, atol=1e-12)


def test_semantic_feedback_prefix_pooling_hand_case():
    head = _hand_head(0.5)
    H = torch.tensor([[[1.0, 0.0], [3.0, 2.0]]], dtype=torch.float64)
    out, S, *_ = head(H, torch.ones(1, 2, dtype=torch.bool), prefix=True)
    sig = lambda v: 1 / (1 + math.exp(-v))
    rows = []
    for z in ([1.0, 0.0], [2.0, 1.0]):
        p = [sig(z[0]), sig(-z[1])]
        rows.append([float(gelu(p[0])), 2 * float(gelu(p[1]))])
    assert np.allclose(out.detach().numpy(), H.numpy() + 0.5 * np.array(rows), atol=1e-12)
    assert np.allclose(S.detach().numpy(), [[2.0, -1.0]])


def test_semantic_pool_constant_and_all_padded():
    H = torch.full((1, 4, 3), 2.5)
    assert torch.equal(SemanticHead.pool(H, torch.ones(1, 4, dtype=torch.bool)), torch.full((1, 3), 2.5))
    with pytest.raises(AllPadded):
        SemanticHead.pool(H, torch.zeros(1, 4, dtype=torch.bool))


def test_pooling_is_padding_invariant():
    m = tiny_model()
    b = random_batch(m.cfg)
    short = torch.tensor([[BOS, 5, 6]])
    padded = torch.tensor([[BOS, 5, 6, 0, 0]])
    inputs = b.inputs.select(slice(0, 1))
    a = m(inputs, short)
    c = m(inputs, padded)
    assert torch.allclose(a.sem_logits, c.sem_logits, atol=1e-12)
    assert torch.allclose(a.logits, c.logits[:, :3], atol=1e-12)


def _shared_pair(**kw):
    with_sf = tiny_model(**kw)
    no_sf = ShotCaptioner(with_sf.cfg.replace(use_sf=False)).double()
    no_sf.load_state_dict({k: v for k, v in with_sf.state_dict().items() if not k.startswith("semantic.")})
    with torch.no_grad():
        with_sf.semantic.beta.zero_()
    return with_sf, no_sf


@pytest.mark.parametrize("pooling", ["prefix", "full"])
def test_beta_zero_matches_model_without_sf(pooling):
    with_sf, no_sf = _shared_pair(sf_pooling=pooling)
    b = random_batch(with_sf.cfg)
    assert torch.equal(with_sf(b.inputs, b.dec_in).logits, no_sf(b.inputs, b.dec_in).logits)


def test_lambda_beta_zero_gradient_decoupling():
    with_sf, no_sf = _shared_pair()
    b = random_batch(with_sf.cfg)
    batch_losses(with_sf, b, lam=0.0)["L_total"].backward()
    batch_losses(no_sf, b, lam=0.0)["L_total"].backward()
    ref = dict(no_sf.named_parameters())
    checked = 0
    for name, p in with_sf.named_parameters():
        if name.startswith("semantic.") or not p.requires_grad:
            continue
        assert torch.equal(p.grad, ref[name].grad), name
        checked += 1
    assert checked == len([n for n, p in no_sf.named_parameters() if p.requires_grad])


def test_dropout_inactive_in_eval_mode():
    plain = tiny_model()
    noisy = ShotCaptioner(plain.cfg.replace(dropout=0.5)).double()
    noisy.load_state_dict(plain.state_dict())
    b = random_batch(plain.cfg)
    plain.eval()
    noisy.eval()
    assert torch.equal(noisy(b.inputs, b.dec_in).logits, plain(b.inputs, b.dec_in).logits)
    noisy.train()
    assert not torch.equal(noisy(b.inputs, b.dec_in).logits, plain(b.inputs, b.dec_in).logits)


# -- losses -------------------------------------------------------------


def test_uniform_logits_give_log_v():
    V = 11
    out = ForwardOutput(torch.zeros(2, 4, V), torch.zeros(2, 4, 8), torch.zeros(2, 22), None)
    t = torch.tensor([[5, 6, 2, 0], [7, 2, 0, 0]])
    losses = compute_losses(out, t, torch.ones(2, 22), lam=0.1)
    assert losses["L_cap"].item() == pytest.approx(math.log(V), abs=1e-6)
    assert losses["L_sf"].item() == pytest.approx(math.log(2), abs=1e-6)


def test_total_loss_combination():
    # cross-entropy of 2.0: logits [a, 0, 0] with target 1 and e^a = e^2 - 2
    a = math.log(math.exp(2.0) - 2.0)
    out = ForwardOutput(
        torch.tensor([[[a, 0.0, 0.0]]], dtype=torch.float64), torch.zeros(1, 1, 2), torch.zeros(1, 4, dtype=torch.float64), None
    )
    losses = compute_losses(out, torch.tensor([[1]]), torch.tensor([[1.0, 0.0, 1.0, 0.0]]), lam=0.1)
    assert losses["L_cap"].item() == pytest.approx(2.0, abs=1e-12)
    assert losses["L_total"].item() == pytest.approx(2.06931, abs=1e-5)


# -- generation ---------------------------------------------------------


def _forced_model(token, max_len=120):
    m = tiny_model(max_len=max_len)
    with torch.no_grad():
        m.vocab_proj.weight.zero_()
        m.vocab_proj.bias.fill_(-10.0)
        m.vocab_proj.bias[token] = 10.0
    return m


def test_generate_always_eos():
    m = _forced_model(EOS)
    b = random_batch(m.cfg)
    assert m.generate(b.inputs) == [[BOS, EOS], [BOS, EOS]]


def test_generate_never_eos_hits_max_len():
    m = _forced_model(7)
    b = random_batch(m.cfg)
    out = m.generate(b.inputs.select(slice(0, 1)))
    assert len(out[0]) == 120 and EOS not in out[0]


# -- shape contract -----------------------------------------------------


@given(
    d_heads=st.sampled_from([(4, 1), (4, 2), (8, 2), (8, 4), (12, 3)]),
    layers=st.integers(1, 2),
    frames=st.sampled_from([2, 4]),
    batch=st.integers(1, 3),
    length=st.integers(1, 6),
    use_refiner=st.booleans(),
    use_sf=st.booleans(),
)
@settings(max_examples=25, deadline=None)
def test_shapes_for_random_small_configs(d_heads, layers, frames, batch, length, use_refiner, use_sf):
    d, h = d_heads
    cfg = tiny_config(
        d_model=d, heads=h, decoder_layers=layers, frames=frames, use_refiner=use_refiner, use_sf=use_sf
    )
    torch.manual_seed(0)
    m = ShotCaptioner(cfg)
    b = random_batch(cfg, batch=batch, length=max(length, 3), dtype=torch.float32)
    tokens = b.dec_in[:, :length]
    tokens[:, 0] = BOS
    grid = m.encode_video(b.inputs.visual)
    assert grid.shape == (batch, cfg.n_tokens, d)
    assert m.refine_tokens(grid).shape == grid.shape
    f_s, mask = m.embed_modalities(b.inputs)
    assert f_s.shape == (batch, 3 * frames, d) and mask.shape == (batch, 3 * frames)
    assert m.fuse(grid, f_s, mask).shape == grid.shape
    out = m(b.inputs, tokens)
    assert out.logits.shape == (batch, length, cfg.vocab_size)
    assert out.hidden.shape == (batch, length, d)
    if use_sf:
        assert out.sem_probs.shape == (batch, 22)
    else:
        assert out.sem_logits is None


def test_disabled_modality_is_fully_masked():
    m = tiny_model(modalities=("bbox", "shuttle"))
    b = random_batch(m.cfg)
    _, mask = m.embed_modalities(b.inputs)
    T = m.cfg.frames
    assert mask[:, T : 2 * T].all()


# -- training -----------------------------------------------------------


@pytest.fixture(scope="module")
def small_corpus():
    return synth_generate(seed=3, n=4)


def test_train_step_freezes_backbone_prefix(small_corpus):
    torch.manual_seed(0)
    cfg = desk_config(len(small_corpus.vocab), backbone_blocks=3)
    m = ShotCaptioner(cfg)
    assert m.backbone.n_frozen_blocks == 1
    frozen = {n: p.detach().clone() for n, p in m.named_parameters() if not p.requires_grad}
    assert any(n.startswith("backbone.blocks.0.") for n in frozen)
    assert "backbone.patch_embed.weight" in frozen and "backbone.pos_embed" in frozen
    assert not any(n.startswith("backbone.blocks.1.") for n in frozen)
    tr = Trainer(m, lr=1e-3)
    rec = tr.train_step(collate(small_corpus.samples, cfg))
    assert set(rec) == {"step", "L_cap", "L_sf", "L_total", "beta", "lr"}
    for n, p in m.named_parameters():
        if n in frozen:
            assert torch.equal(p, frozen[n]), n


def test_zero_gradients_leave_parameters_unchanged():
    m = tiny_model()
    tr = Trainer(m, lr=1e-2)
    before = [p.detach().clone() for p in tr.params]
    for p in tr.params:
        p.grad = torch.zeros_like(p)
    tr.optimizer.step()
    assert all(torch.equal(a, p) for a, p in zip(before, tr.params))


def test_non_finite_loss_aborts_step():
    m = tiny_model()
    tr = Trainer(m)
    with torch.no_grad():
        m.vocab_proj.bias[3] = float("nan")
    before = {n: p.detach().clone() for n, p in m.named_parameters()}
    b = random_batch(m.cfg)
    with pytest.raises(NonFiniteLoss):
        tr.train_step(b)
    assert tr.step_count == 0
    for n, p in m.named_parameters():
        assert torch.equal(p, before[n]) or torch.isnan(p).any()


def test_loss_decreases_over_50_steps(small_corpus, tmp_path):
    torch.manual_seed(0)
    cfg = desk_config(len(small_corpus.vocab))
    m = ShotCaptioner(cfg)
    log = tmp_path / "train.jsonl"
    tr = Trainer(m, lr=1e-3, log_path=log)
    b = collate(small_corpus.samples, cfg)
    recs = [tr.train_step(b) for _ in range(50)]
    assert recs[-1]["L_total"] < 0.5 * recs[0]["L_total"]
    lines = log.read_text().splitlines()
    assert len(lines) == 50 and '"step": 50' in lines[-1]


def test_checkpoint_round_trip(small_corpus, tmp_path):
    torch.manual_seed(0)
    cfg = desk_config(len(small_corpus.vocab))
    m = ShotCaptioner(cfg)
    tr = Trainer(m, lr=1e-3)
    b = collate(small_corpus.samples, cfg)
    for _ in range(3):
        tr.train_step(b)
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, m, small_corpus.vocab, tr.optimizer)
    m2, vocab, header, opt = load_checkpoint(path, optimizer_lr=1e-3)
    assert vocab == small_corpus.vocab and header["optimizer_step"] == 3
    assert m2.semantic.beta.item() == m.semantic.beta.item() != 0.1
    m.eval(), m2.eval()
    assert torch.equal(m(b.inputs, b.dec_in).logits, m2(b.inputs, b.dec_in).logits)
    # continuing from the restored optimizer matches continuing in memory
    tr2 = Trainer(m2, lr=1e-3)
    tr2.optimizer = opt
    tr2.params = [p for _, p in m2.trainable_named_parameters()]
    r1, r2 = tr.train_step(b), tr2.train_step(b)
    assert r1["L_total"] == r2["L_total"]
    assert torch.equal(m(b.inputs, b.dec_in).logits, m2(b.inputs, b.dec_in).logits)
