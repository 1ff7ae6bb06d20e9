"""Phantom generation: geometry validation, tensor-field structure,
signal synthesis and dataset assembly.
"""

import numpy as np
import pytest

from csdt.phantom import (
    DiffusionProtocol,
    PhantomRanges,
    PhantomSpec,
    default_protocol,
    load_dwi,
    make_dataset,
    make_tensor_field,
    sample_spec,
    save_dwi,
    simulate_dwi,
    spread_directions,
)


class TestSpecValidation:
    def test_defaults_valid(self):
        PhantomSpec()

    def test_radius_ordering(self):
        with pytest.raises(ValueError):
            PhantomSpec(r_endo=18.0, r_epi=10.0)
        with pytest.raises(ValueError):
            PhantomSpec(r_endo=10.0, r_epi=40.0)  # outside the grid

    def test_eigenvalue_ordering(self):
        with pytest.raises(ValueError):
            PhantomSpec(eigenvalues=(0.3e-3, 0.6e-3, 1.7e-3))
        with pytest.raises(ValueError):
            PhantomSpec(eigenvalues=(1.7e-3, 0.6e-3, 0.0))

    def test_noise_nonnegative(self):
        with pytest.raises(ValueError):
            PhantomSpec(noise_std=-0.1)


class TestProtocol:
    def test_default_is_valid(self):
        proto = default_protocol()
        assert proto.n_entries == 13
        assert proto.averages == 4
        assert (np.abs(np.linalg.norm(proto.directions, axis=1) - 1.0) < 1e-9).all()

    def test_needs_b0(self):
        g = spread_directions(6)
        with pytest.raises(ValueError, match="b=0"):
            DiffusionProtocol(np.full(6, 1000.0), g)

    def test_collinear_rejected(self):
        g = np.tile([[0.0, 0.0, 1.0]], (7, 1))
        b = np.array([0.0] + [1000.0] * 6)
        with pytest.raises(ValueError, match="collinear"):
            DiffusionProtocol(b, g)

    def test_non_unit_rejected(self):
        g = np.vstack([[0, 0, 1.0], spread_directions(6) * 1.001])
        b = np.array([0.0] + [1000.0] * 6)
        with pytest.raises(ValueError, match="unit"):
            DiffusionProtocol(b, g)


class TestTensorField:
    def test_midwall_ha_zero(self):
        spec = PhantomSpec()
        truth = make_tensor_field(spec)
        # (32, 46) sits at radius 14 = (10 + 18) / 2 exactly
        assert truth.mask[32, 46]
        assert abs(truth.ha[32, 46]) < 1e-12

    def test_ha_endpoints(self):
        spec = PhantomSpec()
        truth = make_tensor_field(spec)
        assert truth.ha[32, 32 + 10] == pytest.approx(60.0)   # endocardial radius
        assert truth.ha[32, 32 + 18] == pytest.approx(-60.0)  # epicardial radius

    def test_eigenvalues_exact_everywhere(self):
        spec = PhantomSpec()
        truth = make_tensor_field(spec)
        D = truth.field.full()[truth.mask]
        evals = np.linalg.eigvalsh(D)[:, ::-1]
        np.testing.assert_allclose(evals, np.tile(spec.eigenvalues, (len(D), 1)), atol=1e-15)

    def test_symmetry_and_trace(self):
        spec = PhantomSpec()
        truth = make_tensor_field(spec)
        D = truth.field.full()
        np.testing.assert_array_equal(D, np.swapaxes(D, -1, -2))
        trace = np.trace(D[truth.mask], axis1=-2, axis2=-1)
        np.testing.assert_allclose(trace, sum(spec.eigenvalues), atol=1e-15)


class TestSimulate:
    def test_b0_noiseless_is_s0(self):
        spec = PhantomSpec()
        stack = simulate_dwi(make_tensor_field(spec), default_protocol(averages=1), spec)
        b0 = stack.images[0, 0]
        assert np.abs(b0[stack.mask] - spec.s0).max() < 1e-12
        assert np.abs(b0[~stack.mask] - spec.background).max() < 1e-12

    def test_aligned_gradient_decay(self):
        # gradient along the primary eigenvector decays by exactly exp(-b*l1)
        spec = PhantomSpec(ha_endo=0.0, ha_epi=0.0)  # fibers purely circumferential
        truth = make_tensor_field(spec)
        g = np.vstack([[0.0, 0.0, 1.0], spread_directions(6), [0.0, 1.0, 0.0]])
        proto = DiffusionProtocol(np.array([0.0] + [1000.0] * 7), g, averages=1)
        # at (32, 32 + r) the circumferential direction is +y, so e1 = (0, 1, 0)
        stack = simulate_dwi(truth, proto, spec)
        got = stack.images[-1, 0, 32, 46].real
        assert got == pytest.approx(spec.s0 * np.exp(-1000.0 * 1.7e-3), abs=1e-12)

    def test_noiseless_signal_bounds(self):
        spec = PhantomSpec()
        stack = simulate_dwi(make_tensor_field(spec), default_protocol(averages=1), spec)
        mags = np.abs(stack.images)
        assert mags.min() > 0
        assert mags.max() <= spec.s0 + 1e-12

    def test_monotone_in_b(self):
        spec = PhantomSpec()
        truth = make_tensor_field(spec)
        g = np.vstack([[0, 0, 1.0], spread_directions(6)])
        sig = []
        for b in (500.0, 1000.0, 2000.0):
            proto = DiffusionProtocol(np.array([0.0] + [b] * 6), g, averages=1)
            stack = simulate_dwi(truth, proto, spec)
            sig.append(np.abs(stack.images[1:, 0][:, truth.mask]))
        assert (sig[0] > sig[1]).all() and (sig[1] > sig[2]).all()

    def test_noise_deterministic_per_seed(self):
        spec = PhantomSpec(noise_std=0.05, seed=21)
        truth = make_tensor_field(spec)
        proto = default_protocol(averages=2)
        a = simulate_dwi(truth, proto, spec).images
        b = simulate_dwi(truth, proto, spec).images
        assert np.array_equal(a, b)
        assert not np.isreal(a).all()


class TestDataset:
    def test_split_sizes_and_distinct_geometry(self):
        proto = default_protocol(n_directions=6, averages=1)
        ds = make_dataset((10, 2, 2), protocol=proto, seed=3)
        assert (len(ds.train), len(ds.val), len(ds.test)) == (10, 2, 2)
        specs = [s.spec for s in ds.all_stacks()]
        assert len({(sp.center, sp.r_endo, sp.r_epi, sp.ha_endo, sp.ha_epi) for sp in specs}) == 14

    def test_deterministic(self):
        proto = default_protocol(n_directions=6, averages=1)
        a = make_dataset((2, 1, 1), protocol=proto, seed=9)
        b = make_dataset((2, 1, 1), protocol=proto, seed=9)
        for sa, sb in zip(a.all_stacks(), b.all_stacks()):
            assert np.array_equal(sa.images, sb.images)
            assert sa.spec == sb.spec

    def test_ranges_respected(self):
        rng = np.random.default_rng(0)
        ranges = PhantomRanges()
        for _ in range(50):
            spec = sample_spec(PhantomSpec(), ranges, rng, seed=0)
            assert ranges.r_endo[0] <= spec.r_endo <= ranges.r_endo[1]
            assert spec.r_epi - spec.r_endo <= ranges.wall_thickness[1]
            assert abs(spec.center[0] - 32.0) <= ranges.center_jitter


class TestIO:
    def test_save_load_round_trip(self, tmp_path):
        spec = PhantomSpec(noise_std=0.02, seed=5)
        stack = simulate_dwi(make_tensor_field(spec), default_protocol(averages=2), spec)
        path = str(tmp_path / "subject.csdt")
        save_dwi(stack, path)
        loaded = load_dwi(path)
        assert np.array_equal(loaded.images, stack.images)
        assert np.array_equal(loaded.mask, stack.mask)
        assert np.array_equal(loaded.ha, stack.ha)
        assert np.array_equal(loaded.field.d6, stack.field.d6)
        assert loaded.spec == stack.spec
        assert np.array_equal(loaded.protocol.bvalues, stack.protocol.bvalues)
