import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coarse2fine.adapt import (
    PhaseTransition,
    ResizeMethod,
    SingularResizeError,
    interp_matrix,
    interp_posemb,
    migrate,
    patch_resize_matrix,
    pi_resize,
    resize_kernel_bilinear,
)
from coarse2fine.checkpoint import Checkpoint, PhaseProvenance
from coarse2fine.compress import CompressionMethod
from coarse2fine.model import AdamState, ModelConfig, forward, init_params
from coarse2fine.tokenizer import PatchSpec

M = CompressionMethod


class TestInterpMatrix:
    def test_rows_sum_to_one(self):
        for n_old, n_new in [(4, 7), (7, 4), (2, 9), (5, 5), (1, 3), (3, 1)]:
            assert np.allclose(interp_matrix(n_old, n_new).sum(axis=1), 1.0)

    def test_endpoints_align(self):
        A = interp_matrix(4, 9)
        assert A[0, 0] == 1.0 and A[-1, -1] == 1.0

    def test_identity(self):
        assert np.array_equal(interp_matrix(6, 6), np.eye(6))


class TestPosemb:
    def test_identity_is_bitwise(self, rng):
        g = rng.normal(size=(3, 5, 4))
        out = interp_posemb(g, (3, 5))
        assert np.array_equal(out, g) and out is not g

    def test_ramp(self):
        g = np.arange(4.0).reshape(1, 4, 1)
        out = interp_posemb(g, (1, 7))[0, :, 0]
        assert np.max(np.abs(out - [0, 0.5, 1, 1.5, 2, 2.5, 3])) <= 1e-12

    @pytest.mark.parametrize("t_old, t_new", [(16, 32), (32, 64), (8, 64), (5, 13)])
    def test_linear_ramps_exact(self, rng, t_old, t_new):
        slope, icpt = rng.normal(size=(1, 1, 3)), rng.normal(size=(1, 1, 3))
        x_old = np.linspace(0, 1, t_old)[None, :, None]
        x_new = np.linspace(0, 1, t_new)[None, :, None]
        g = np.broadcast_to(icpt + slope * x_old, (2, t_old, 3))
        assert np.max(np.abs(interp_posemb(g, (2, t_new)) - (icpt + slope * x_new))) <= 1e-12

    def test_constant(self):
        g = np.full((2, 3, 4), 1.25)
        assert np.allclose(interp_posemb(g, (2, 11)), 1.25, atol=0)

    @settings(max_examples=25)
    @given(st.integers(1, 12), st.floats(-3, 3), st.floats(-3, 3))
    def test_linear_operator(self, t_new, a, b):
        rng = np.random.default_rng(t_new)
        A, B = rng.normal(size=(2, 5, 3)), rng.normal(size=(2, 5, 3))
        lhs = interp_posemb(a * A + b * B, (2, t_new))
        rhs = a * interp_posemb(A, (2, t_new)) + b * interp_posemb(B, (2, t_new))
        assert np.allclose(lhs, rhs, atol=1e-12)

    def test_frequency_axis_supported(self, rng):
        g = rng.normal(size=(2, 3, 1))
        assert interp_posemb(g, (3, 3)).shape == (3, 3, 1)

    def test_rejects_bad_rank(self):
        with pytest.raises(ValueError):
            interp_posemb(np.zeros((3, 4)), (3, 8))


class TestBilinearKernel:
    def test_identity_and_constant(self, rng):
        k = rng.normal(size=(2, 4, 3))
        assert np.array_equal(resize_kernel_bilinear(k, 4), k)
        assert np.allclose(resize_kernel_bilinear(np.full((2, 4, 3), -0.5), 9), -0.5)

    def test_midpoint(self):
        k = np.array([2.0, 5.0]).reshape(1, 2, 1)
        assert resize_kernel_bilinear(k, 3)[0, :, 0].tolist() == [2.0, 3.5, 5.0]

    def test_linear_operator(self, rng):
        A, B = rng.normal(size=(2, 16, 4, 3))
        assert np.allclose(resize_kernel_bilinear(3 * A - B, 9), 3 * resize_kernel_bilinear(A, 9) - resize_kernel_bilinear(B, 9))


class TestPiResize:
    def test_identity(self, rng):
        k = rng.normal(size=(4, 8, 3))
        assert np.array_equal(pi_resize(k, 8), k)

    def test_resize_matrix_is_bilinear_patch_map(self, rng):
        x = rng.normal(size=(3, 4))
        B = patch_resize_matrix(3, 4, 8)
        assert np.allclose(B @ x.ravel(), resize_kernel_bilinear(x[:, :, None], 8)[:, :, 0].ravel())

    @pytest.mark.parametrize("p_f, w_old, w_new", [(16, 16, 32), (16, 16, 64), (16, 32, 64), (4, 3, 7)])
    def test_upsampling_preserves_inner_products(self, rng, p_f, w_old, w_new):
        w = rng.normal(size=(p_f, w_old, 1))
        w_hat = pi_resize(w, w_new)
        B = patch_resize_matrix(p_f, w_old, w_new)
        for _ in range(100):
            x = rng.normal(size=p_f * w_old)
            assert abs(x @ w.ravel() - (B @ x) @ w_hat.ravel()) <= 1e-6

    @pytest.mark.parametrize("p_f, w_old, w_new", [(16, 32, 16), (16, 64, 16), (16, 64, 32), (3, 9, 4)])
    def test_downsampling_matches_normal_equations(self, rng, p_f, w_old, w_new):
        d = 5
        k = rng.normal(size=(p_f, w_old, d))
        B = patch_resize_matrix(p_f, w_old, w_new)
        # argmin || B^T w_hat - w ||: normal equations (B B^T) w_hat = B w
        oracle = np.linalg.solve(B @ B.T, B @ k.reshape(-1, d))
        assert np.max(np.abs(pi_resize(k, w_new).reshape(-1, d) - oracle)) <= 1e-6

    def test_per_channel(self, rng):
        k = rng.normal(size=(4, 8, 3))
        full = pi_resize(k, 4)
        for c in range(3):
            assert np.allclose(full[:, :, c], pi_resize(k[:, :, c:c + 1], 4)[:, :, 0])

    def test_reports_rank_deficiency(self, rng):
        # 16 -> 15 is well posed but not well conditioned enough for rcond=0.5
        with pytest.raises(SingularResizeError):
            pi_resize(rng.normal(size=(2, 16, 1)), 15, rcond=0.5)

    def test_resize_method_parse(self):
        assert ResizeMethod.parse("BL") is ResizeMethod.BILINEAR
        assert ResizeMethod.parse("pi") is ResizeMethod.PI_RESIZE
        assert ResizeMethod.for_method(M.PATCH_PI) is ResizeMethod.PI_RESIZE
        assert ResizeMethod.for_method(M.AVG_POOL) is ResizeMethod.BILINEAR
        with pytest.raises(ValueError):
            ResizeMethod.parse("cubic")


def make_ckpt(rng, method, C, n_mels=32, T=128, opt=True):
    cfg = ModelConfig(num_classes=3, embed_dim=8, num_layers=1, num_heads=2, n_mels=n_mels, time_frames=T)
    from coarse2fine.tokenizer import phase_geometry

    patch, grid = phase_geometry(n_mels, T, cfg.patch, method, C)
    params = init_params(cfg, rng, patch, grid)
    state = AdamState(3, {k: np.ones_like(v) for k, v in params.items()}, {k: np.ones_like(v) for k, v in params.items()})
    return Checkpoint(params, cfg, PhaseProvenance(M.parse(method), C, patch, grid), 0, state if opt else None)


def target(ckpt, method, C, index=1):
    from coarse2fine.tokenizer import phase_geometry

    patch, grid = phase_geometry(ckpt.config.n_mels, ckpt.config.time_frames, ckpt.config.patch, method, C)
    return PhaseProvenance(M.parse(method), C, patch, grid, index)


class TestMigrate:
    def test_pool_two_to_one(self, rng):
        ck = make_ckpt(rng, "pool_avg", 2, T=1024)
        assert ck.params["pos.grid"].shape[1] == 32
        out = migrate(ck, PhaseTransition(ck.provenance, target(ck, "none", 1)))
        assert out.params["pos.grid"].shape[1] == 64
        assert np.array_equal(out.params["patch.kernel"], ck.params["patch.kernel"])
        assert out.opt_state is None
        assert out.provenance.C == 1 and out.provenance.phase_index == 1

    @pytest.mark.parametrize("method, resize", [("patch_bl", "bilinear"), ("patch_pi", "pi")])
    def test_patch_four_to_one(self, rng, method, resize):
        ck = make_ckpt(rng, method, 4, n_mels=128, T=1024)
        assert ck.params["patch.kernel"].shape[:2] == (16, 64)
        assert ck.params["pos.grid"].shape[:2] == (8, 16)
        out = migrate(ck, PhaseTransition(ck.provenance, target(ck, "none", 1), resize))
        assert out.params["patch.kernel"].shape[:2] == (16, 16)
        assert out.params["pos.grid"].shape[:2] == (8, 64)
        expect = (pi_resize if resize == "pi" else resize_kernel_bilinear)(ck.params["patch.kernel"], 16)
        assert np.array_equal(out.params["patch.kernel"], expect)

    def test_degenerate_transition(self, rng):
        ck = make_ckpt(rng, "fshift", 2)
        out = migrate(ck, PhaseTransition(ck.provenance, ck.provenance))
        assert all(np.array_equal(out.params[k], v) for k, v in ck.params.items())
        assert out.opt_state is None

    def test_encoder_tensors_bytewise_unchanged(self, rng):
        ck = make_ckpt(rng, "patch_pi", 4)
        out = migrate(ck, PhaseTransition(ck.provenance, target(ck, "patch_pi", 2), "pi"))
        for k, v in ck.params.items():
            if k not in ("patch.kernel", "pos.grid"):
                assert out.params[k].tobytes() == v.tobytes()
        assert np.array_equal(out.params["pos.cls"], ck.params["pos.cls"])

    @pytest.mark.parametrize("method", ["fshift", "pool_avg", "pool_max", "patch_bl", "patch_pi"])
    def test_forward_after_migration(self, rng, method):
        ck = make_ckpt(rng, method, 4)
        mid = migrate(ck, PhaseTransition(ck.provenance, target(ck, method, 2), ResizeMethod.for_method(M.parse(method))))
        out = migrate(mid, PhaseTransition(mid.provenance, target(mid, "none", 1, 2)))
        logits = forward(out.params, out.config, rng.normal(size=(2, 32, 128)))
        assert logits.shape == (2, 3) and np.all(np.isfinite(logits))

    def test_rejects_provenance_mismatch(self, rng):
        ck = make_ckpt(rng, "pool_avg", 2)
        wrong = target(ck, "pool_avg", 4, 0)
        with pytest.raises(ValueError, match="provenance"):
            migrate(ck, PhaseTransition(wrong, target(ck, "none", 1)))

    def test_rejects_increasing_c(self, rng):
        ck = make_ckpt(rng, "pool_avg", 2)
        with pytest.raises(ValueError, match="must not increase"):
            migrate(ck, PhaseTransition(ck.provenance, target(ck, "pool_avg", 4)))
