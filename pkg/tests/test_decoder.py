"""Progressive decoder contracts."""

import numpy as np
import pytest

from rcsnet import engine as E
from rcsnet.decoder import DecoderParams, decode, deinterleave, interleave
from rcsnet.engine import GridTensor
from rcsnet.errors import DimensionError, ParameterError

from oracles import gradcheck, gru_loop, linear_loop


def t32(arr):
    return GridTensor(np.asarray(arr, dtype=np.float32))


def test_interleave_order():
    vol = np.zeros((1, 4, 1, 1), dtype=np.float32)
    spd = np.zeros((1, 4, 1, 1), dtype=np.float32)
    vol[0, :, 0, 0] = [1, 2, 3, 4]
    spd[0, :, 0, 0] = [10, 20, 30, 40]
    merged = interleave(t32(vol), t32(spd))
    assert merged.data[0, :, 0, 0].tolist() == [1, 10, 2, 20, 3, 30, 4, 40]


def test_interleave_round_trip():
    rng = np.random.default_rng(0)
    vol = rng.normal(size=(2, 4, 3, 3)).astype(np.float32)
    spd = rng.normal(size=(2, 4, 3, 3)).astype(np.float32)
    back_v, back_s = deinterleave(interleave(t32(vol), t32(spd)))
    assert np.array_equal(back_v.data, vol)
    assert np.array_equal(back_s.data, spd)


def test_interleave_rejects_wrong_channel_count():
    with pytest.raises(DimensionError):
        interleave(t32(np.zeros((1, 3, 2, 2))), t32(np.zeros((1, 3, 2, 2))))
    with pytest.raises(DimensionError):
        interleave(t32(np.zeros((1, 4, 2, 2))), t32(np.zeros((1, 4, 3, 2))))


def test_decode_output_shape():
    rng = np.random.default_rng(1)
    params = DecoderParams.init(rng, channels=4, hidden=6)
    fused = t32(rng.normal(size=(2, 4, 8, 8)))
    out = decode(fused, params, t_out=5)
    assert out.frames.shape == (2, 5, 8, 8, 8)


def test_decode_rejects_bad_horizon():
    rng = np.random.default_rng(2)
    params = DecoderParams.init(rng, channels=4, hidden=6)
    with pytest.raises(ParameterError):
        decode(t32(np.zeros((1, 4, 4, 4))), params, t_out=0)


def test_bias_only_heads_fix_channel_pattern():
    rng = np.random.default_rng(3)
    params = DecoderParams.init(rng, channels=4, hidden=6)
    params.head_volume.w.data[:] = 0.0
    params.head_volume.b.data[:] = 1.0
    params.head_speed.w.data[:] = 0.0
    params.head_speed.b.data[:] = 2.0
    out = decode(t32(rng.normal(size=(1, 4, 4, 4))), params, t_out=3).frames
    expect = np.array([1, 2, 1, 2, 1, 2, 1, 2], dtype=np.float32)
    assert np.allclose(out.data.transpose(0, 1, 3, 4, 2), expect)


def test_constant_step_embedding_repeats_frames():
    # with the per-step embedding weights zeroed every frame sees the same
    # additive constant, so all frames are identical
    rng = np.random.default_rng(4)
    params = DecoderParams.init(rng, channels=3, hidden=5)
    params.step_embed.w.data[:] = 0.0
    out = decode(t32(rng.normal(size=(2, 3, 4, 4))), params, t_out=4).frames.data
    for k in range(1, 4):
        assert np.array_equal(out[:, k], out[:, 0])


def test_scalar_recurrence_matches_hand_oracle():
    """Re-run the whole decode schedule with loop primitives."""
    rng = np.random.default_rng(5)
    c_f, hidden, h, t_out = 2, 3, 2, 2
    params = DecoderParams.init(rng, channels=c_f, hidden=hidden)
    fused32 = rng.normal(size=(1, c_f, h, h)).astype(np.float32)
    out = decode(t32(fused32), params, t_out=t_out).frames.data

    from oracles import conv2d_loop
    d = {n: t.data.astype(np.float64) for n, t in params.tensors()}
    fused = fused32.astype(np.float64)
    ctx = conv2d_loop(np.maximum(conv2d_loop(fused, d["ctx_a.w"], d["ctx_a.b"], 1, 1, 1), 0.0),
                      d["ctx_b.w"], d["ctx_b.b"], 1, 1, 1)
    z = ctx.mean(axis=(2, 3))
    hstate = np.tanh(linear_loop(z, d["init_hidden.w"], d["init_hidden.b"]))
    gru_d = {k.split(".")[1]: v for k, v in d.items() if k.startswith("gru.")}
    frames = []
    for _ in range(t_out):
        hstate = gru_loop(z, hstate, gru_d)
        embed = linear_loop(hstate, d["step_embed.w"], d["step_embed.b"])
        step = ctx + embed.reshape(1, c_f, 1, 1)
        q = np.maximum(conv2d_loop(step, d["head_shared.w"], d["head_shared.b"], 1, 1, 1), 0.0)
        vol = conv2d_loop(q, d["head_volume.w"], d["head_volume.b"], 1, 0, 1)
        spd = conv2d_loop(q, d["head_speed.w"], d["head_speed.b"], 1, 0, 1)
        frame = np.zeros((1, 8, h, h))
        frame[:, 0::2] = vol
        frame[:, 1::2] = spd
        frames.append(frame)
        z = step.mean(axis=(2, 3))
    expect = np.stack(frames, axis=1)
    assert np.abs(out - expect).max() <= 1e-5


def test_recurrence_is_causal():
    # diverging the pooled feedback from step k onward cannot change
    # frames before k
    rng = np.random.default_rng(6)
    c_f, hidden, h = 2, 3, 2
    params = DecoderParams.init(rng, channels=c_f, hidden=hidden)
    fused = t32(rng.normal(size=(1, c_f, h, h)))

    def roll(z_bump_at):
        from rcsnet.decoder import _context, _emit_frame
        with E.no_grad():
            ctx = _context(fused, params)
            z = E.gap(ctx)
            hs = E.tanh(E.linear(z, params.init_hidden.w, params.init_hidden.b))
            frames = []
            for k in range(4):
                hs = E.gru_cell_step(z, hs, params.gru)
                embed = E.linear(hs, params.step_embed.w, params.step_embed.b)
                step = E.add(ctx, E.reshape(embed, (1, c_f, 1, 1)))
                frames.append(_emit_frame(step, params).data)
                z = E.gap(step)
                if k + 1 == z_bump_at:
                    z = E.add(z, 1.0)
            return frames

    base = roll(z_bump_at=None)
    bumped = roll(z_bump_at=2)
    for k in range(2):
        assert np.array_equal(base[k], bumped[k])
    assert not np.array_equal(base[2], bumped[2])
    # and the plain decode agrees with the un-bumped manual roll
    frames = decode(fused, params, 4).frames.data
    for k in range(4):
        assert np.array_equal(frames[:, k], base[k])


def test_decoder_gradient_flows_through_recurrence():
    rng = np.random.default_rng(7)
    params = DecoderParams.init(rng, channels=2, hidden=3, dtype=np.float64)
    fused = GridTensor(rng.normal(size=(1, 2, 3, 3)), dtype=np.float64)

    def loss():
        return E.mean_all(E.square(decode(fused, params, 3).frames))

    tensors = dict(params.tensors())
    checked, worst, failures = gradcheck(loss, tensors, rng, per_tensor=3, step=1e-4)
    gru_checked = [n for n in tensors if n.startswith("gru.")]
    assert checked >= 20
    assert gru_checked
    assert not failures, failures
