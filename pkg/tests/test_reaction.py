"""Reaction operators against pair and tuple enumeration."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import exact_cs, naive_coag, naive_fragmentation, naive_multi, naive_scattering
from smolux.errors import ConfigurationError
from smolux.mass_measure import BaseMeasure, MassGrid, make_power_law_base
from smolux.reaction import (CoagKernel, Fragmentation, MultiCoagKernel, ReactionModel, Scattering,
                             batch_convolve, certify_scattering, coag_apply, coag_terms,
                             coag_tv_lipschitz_check, fragmentation_apply, multi_coag_apply,
                             multi_coag_measures, scattering_apply, tv_norm)


def random_kernel(rng, n, cutoff=None):
    a = rng.random((n, n))
    return CoagKernel(a + a.T, cutoff)


def random_base(rng, n):
    return BaseMeasure(MassGrid(n), rng.uniform(0.2, 2.0, n))


def random_fragmentation(rng, base):
    n = base.n_mass
    D = np.tril(rng.random((n, n)), -1)
    m = base.masses
    for y in range(1, n):
        D[y] *= m[y] / ((D[y] * base.weights) @ m)
    rate = rng.random(n)
    rate[0] = 0.0
    return Fragmentation(base, rate, D)


def scattering_dict(scat):
    return {scat.y0 + 1 + r: list(scat.table[r]) for r in range(scat.y0)}


def first_moment(measure):
    return float(np.dot(np.arange(1, measure.shape[-1] + 1), measure))


class TestCoagulation:
    def test_zero_density(self):
        base = make_power_law_base(5, 1.0)
        assert np.array_equal(coag_apply(CoagKernel.constant(5), np.zeros(5), base), np.zeros(5))

    def test_one_pair(self):
        base = BaseMeasure(MassGrid(2), [1.0, 1.0])
        kp, km = coag_terms(CoagKernel.constant(2), [1.5, 0.0], base, "drop")
        np.testing.assert_array_equal(kp, [0.0, 1.125])
        np.testing.assert_array_equal(km, [2.25, 0.0])

    def test_asymmetric_table_rejected(self):
        with pytest.raises(ConfigurationError):
            CoagKernel(np.array([[1.0, 2.0], [1.0, 1.0]]))

    def test_absorb_top_conserves_mass(self, rng):
        for _ in range(20):
            base = random_base(rng, 8)
            k = coag_apply(random_kernel(rng, 8), rng.random(8), base, "absorb_top")
            assert abs(first_moment(k * base.weights)) <= 1e-12

    @pytest.mark.parametrize("overflow", ["drop", "absorb_top", "extend"])
    def test_matches_pair_enumeration(self, rng, overflow):
        for n in range(1, 7):
            base, K = random_base(rng, n), random_kernel(rng, n)
            f = rng.normal(size=n)
            ref = naive_coag(K.table, f, base.weights, overflow)
            np.testing.assert_allclose(coag_apply(K, f, base, overflow), ref, rtol=1e-12, atol=1e-14)

    def test_cutoff_matches_pair_enumeration(self, rng):
        base, K = random_base(rng, 6), random_kernel(rng, 6, cutoff=4)
        f = rng.random(6)
        ref = naive_coag(K.table, f, base.weights, "cutoff", 4)
        np.testing.assert_allclose(coag_apply(K, f, base, "cutoff"), ref, rtol=1e-12, atol=1e-14)

    def test_batched_sites(self, rng):
        base, K = random_base(rng, 5), random_kernel(rng, 5)
        f = rng.random((3, 4, 5))
        out = coag_apply(K, f, base, "drop")
        for idx in np.ndindex(3, 4):
            np.testing.assert_allclose(out[idx], coag_apply(K, f[idx], base, "drop"), rtol=1e-14)

    def test_density_norm_bound(self, rng):
        base = make_power_law_base(12, 2.0)
        C, m = base.conv_constant, base.total_mass
        for _ in range(50):
            K = random_kernel(rng, 12)
            f = rng.normal(size=12)
            z = np.abs(f).max()
            assert np.abs(coag_apply(K, f, base, "drop")).max() <= K.bound_M * (C / 2 + m) * z * z * (1 + 1e-12)

    @given(arrays(float, 6, elements=st.floats(0, 10)))
    @settings(max_examples=50, deadline=None)
    def test_sign_split(self, f):
        base = make_power_law_base(6, 1.0)
        kp, km = coag_terms(CoagKernel.constant(6, 0.7), f, base, "drop")
        assert np.all(kp >= 0) and np.all(km >= 0)

    def test_batch_convolve(self):
        out = batch_convolve(np.array([1.0, 1.0]), np.array([1.0, 1.0]))
        np.testing.assert_array_equal(out, [0, 1, 2, 1])


class TestLipschitz:
    def test_equal_inputs(self, rng):
        base = make_power_law_base(6, 2.0)
        f = rng.random(6)
        rep = coag_tv_lipschitz_check(CoagKernel.constant(6), f, f, base)
        assert rep.lhs == 0.0 and rep.passed

    def test_zero_partner_reduces_to_direct_norm(self, rng):
        base = make_power_law_base(6, 2.0)
        K = random_kernel(rng, 6)
        f = rng.random(6)
        rep = coag_tv_lipschitz_check(K, f, np.zeros(6), base, constant=1.5)
        direct = np.abs(coag_apply(K, f, base, "extend")).sum()
        assert rep.lhs == pytest.approx(direct, rel=1e-14)
        assert rep.rhs == pytest.approx(1.5 * K.bound_M * tv_norm(f, base.weights) ** 2, rel=1e-14)
        assert rep.passed

    def test_single_atom_attains_three_halves(self):
        base = BaseMeasure(MassGrid(4), np.ones(4))
        f = np.array([2.0, 0, 0, 0])
        at_one = coag_tv_lipschitz_check(CoagKernel.constant(4), f, np.zeros(4), base)
        assert at_one.lhs / at_one.rhs == pytest.approx(1.5, rel=1e-14)
        assert not at_one.passed
        assert coag_tv_lipschitz_check(CoagKernel.constant(4), f, np.zeros(4), base, constant=1.5).passed

    def test_three_halves_holds_on_random_pairs(self, rng):
        base = make_power_law_base(16, 2.0)
        for _ in range(300):
            K = random_kernel(rng, 16)
            f, g = rng.normal(size=16), rng.normal(size=16)
            assert coag_tv_lipschitz_check(K, f, g, base, constant=1.5).passed


class TestMultiCoagulation:
    def test_binary_only_equals_coagulation(self, rng):
        base, K = random_base(rng, 6), random_kernel(rng, 6)
        f = rng.random(6)
        multi = MultiCoagKernel(K, {})
        for overflow in ("drop", "absorb_top"):
            assert np.array_equal(multi_coag_apply(multi, f, base, overflow), coag_apply(K, f, base, overflow))

    def test_single_triple(self):
        base = make_power_law_base(4, 2.0)
        v = 1.7
        gain, loss = multi_coag_measures(MultiCoagKernel(None, {3: 1.0}), [v, 0, 0, 0], base, "drop")
        assert gain[2] / base.weights[2] == pytest.approx(v ** 3 / (6 * base.weights[2]), rel=1e-15)
        assert loss[0] == pytest.approx(v ** 3 / 2, rel=1e-15)

    @pytest.mark.parametrize("order", [3, 4])
    def test_matches_tuple_enumeration(self, rng, order):
        for n in (2, 4, 6):
            base = random_base(rng, n)
            phi = rng.uniform(0.1, 1.0, n)
            f = rng.normal(size=n)
            kern = MultiCoagKernel(None, {order: (0.8, phi)})
            for overflow in ("extend", "drop", "absorb_top"):
                ref = naive_multi(order, 0.8, phi, f, base.weights, overflow)
                out = multi_coag_apply(kern, f, base, overflow)
                np.testing.assert_allclose(out[:len(ref)], ref, rtol=1e-12, atol=1e-13)

    def test_mass_conserved_on_extended_range(self, rng):
        for _ in range(50):
            base = random_base(rng, 6)
            kern = MultiCoagKernel(CoagKernel.constant(6), {3: 1.0, 4: 0.5})
            f = rng.random(6)
            out = multi_coag_apply(kern, f, base, "extend")
            scale = first_moment(np.abs(out))
            assert abs(first_moment(out)) <= 1e-12 * scale

    def test_constant_kernel_bounds(self, rng):
        base = make_power_law_base(10, 2.0)
        C, m = base.conv_constant, base.total_mass
        for order in (3, 4):
            for _ in range(20):
                f = rng.random(10)
                z = f.max()
                gain, loss = multi_coag_measures(MultiCoagKernel(None, {order: 1.0}), f, base, "drop")
                gp, gm = gain / base.weights, loss / base.weights
                assert gp.max() <= C ** (order - 1) / math.factorial(order) * z ** order * (1 + 1e-12)
                assert gm.max() <= m ** (order - 1) / math.factorial(order - 1) * z ** order * (1 + 1e-12)

    def test_rejects_general_tables(self):
        with pytest.raises(ConfigurationError):
            MultiCoagKernel(None, {3: (np.ones((2, 2, 2)), None)})
        with pytest.raises(ConfigurationError):
            MultiCoagKernel(None, {2: 1.0})

    def test_cutoff_unsupported(self):
        base = make_power_law_base(4, 2.0)
        with pytest.raises(ConfigurationError):
            multi_coag_apply(MultiCoagKernel(None, {3: 1.0}), np.ones(4), base, "cutoff")

    def test_bound_includes_phi_peak(self):
        kern = MultiCoagKernel(CoagKernel.constant(3, 0.5), {3: (2.0, [1.0, 0.5, 0.5])})
        assert kern.bound_M == 2.0 and kern.n_max == 3


class TestFragmentation:
    def test_zero_rate(self, rng):
        base = make_power_law_base(6, 2.0)
        frag = Fragmentation.uniform_binary(base, 0.0)
        assert np.array_equal(fragmentation_apply(frag, rng.random(6)), np.zeros(6))

    def test_single_splitter(self):
        base = make_power_law_base(4, 2.0)
        w = base.weights
        D = np.zeros((4, 4))
        D[2, 0], D[2, 1] = 1.0 / w[0], 1.0 / w[1]
        frag = Fragmentation(base, [0.0, 0.0, 1.0, 0.0], D)
        f = np.array([0.0, 0.0, 0.9, 0.0])
        out = fragmentation_apply(frag, f)
        assert out[2] == -0.9
        gained = out[0] * w[0] * 1 + out[1] * w[1] * 2
        assert gained == pytest.approx(3 * 0.9 * w[2], rel=1e-15)

    def test_mass_condition_enforced(self):
        base = make_power_law_base(3, 0.0)
        D = np.zeros((3, 3))
        D[2, 0] = 1.0
        with pytest.raises(ConfigurationError):
            Fragmentation(base, 1.0, D)

    def test_heavier_fragments_rejected(self):
        base = make_power_law_base(3, 0.0)
        with pytest.raises(ConfigurationError):
            Fragmentation(base, 1.0, np.eye(3))

    def test_matches_enumeration_and_conserves_mass(self, rng):
        for n in range(2, 7):
            base = random_base(rng, n)
            frag = random_fragmentation(rng, base)
            f = rng.normal(size=n)
            out = fragmentation_apply(frag, f)
            ref = naive_fragmentation(frag.rate, frag.density, f, base.weights)
            np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-14)
            scale = first_moment(np.abs(f * base.weights)) * frag.sup_B
            assert abs(first_moment(out * base.weights)) <= 1e-10 * scale

    def test_uniform_binary_condition(self):
        base = make_power_law_base(12, 2.0)
        frag = Fragmentation.uniform_binary(base, 0.02)
        value, ok = frag.condition(1.0)
        assert value == pytest.approx(0.02 * (1 + frag.density.max()), rel=1e-15) and ok
        assert frag.rate[0] == 0.0
        assert not frag.condition(value)[1]


class TestScattering:
    def test_support_below_half_cutoff(self, rng):
        base = make_power_law_base(8, 2.0)
        scat = Scattering.halves(base, 6)
        f = np.zeros(8)
        f[:3] = rng.random(3)
        assert np.array_equal(scattering_apply(scat, CoagKernel.constant(8, 1.0, 6), f), np.zeros(8))

    def test_one_pair(self):
        base = BaseMeasure(MassGrid(2), [1.0, 1.0])
        scat = Scattering.uniform(base, 2)
        v = 0.6
        out = scattering_apply(scat, CoagKernel.constant(2, 1.0, 2), [0.0, v])
        np.testing.assert_allclose(out, [4 / 3 * v * v, 4 / 3 * v * v - 2 * v * v], rtol=1e-15)

    @pytest.mark.parametrize("symmetrize", [False, True])
    def test_matches_pair_enumeration(self, rng, symmetrize):
        for n in range(2, 7):
            y0 = int(rng.integers(1, n + 1))
            base = random_base(rng, n)
            scat = Scattering(base, y0, rng.random((y0, y0)))
            K = random_kernel(rng, n, cutoff=y0)
            f = rng.normal(size=n)
            out = scattering_apply(scat, K, f, symmetrize=symmetrize)
            ref = naive_scattering(scattering_dict(scat), K.table, f, base.weights, y0, symmetrize)
            np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-13)

    def test_cutoff_plus_scattering_conserves_mass(self, rng):
        for _ in range(50):
            base = random_base(rng, 8)
            K = random_kernel(rng, 8, cutoff=6)
            scat = Scattering.halves(base, 6)
            f = rng.random(8)
            total = coag_apply(K, f, base, "cutoff") + scattering_apply(scat, K, f)
            scale = first_moment(np.abs(f * base.weights)) * 2 * K.bound_M * f.sum()
            assert abs(first_moment(total * base.weights)) <= 1e-12 * scale

    def test_certified_constant_matches_loops(self, rng):
        assert certify_scattering(Scattering(make_power_law_base(4, 1.0), 4, np.zeros((4, 4)))) == 0.0
        flat = BaseMeasure(MassGrid(6), np.ones(6))
        scat = Scattering.uniform(flat, 6)
        assert certify_scattering(scat) == exact_cs(scattering_dict(scat), flat.weights, 6)
        for y0 in (4, 8):
            base = make_power_law_base(8, 2.0)
            scat = Scattering(base, y0, rng.random((y0, y0)))
            assert certify_scattering(scat) == exact_cs(scattering_dict(scat), base.weights, y0)

    def test_default_instances_conserve_mass(self):
        base = make_power_law_base(10, 2.0)
        assert Scattering.halves(base, 7).mass_conserving()
        assert Scattering.uniform(base, 7).mass_conserving()
        assert not Scattering(base, 3, np.ones((3, 3))).mass_conserving()


class TestReactionModel:
    def full_model(self, rng):
        base = make_power_law_base(8, 2.0)
        K = random_kernel(rng, 8, cutoff=6)
        return ReactionModel(base, coag=K, frag=Fragmentation.uniform_binary(base, 0.1),
                             scat=Scattering.halves(base, 6), overflow="cutoff")

    def test_decomposition(self, rng):
        rxn = self.full_model(rng)
        f = rng.random((3, 8))
        np.testing.assert_allclose(rxn(f), rxn.gain(f) - rxn.loss_rate(f) * f, rtol=1e-14)
        parts = (coag_apply(rxn.coag, f, rxn.base, "cutoff") + fragmentation_apply(rxn.frag, f)
                 + scattering_apply(rxn.scat, rxn.coag, f))
        np.testing.assert_allclose(rxn(f), parts, rtol=1e-12, atol=1e-14)

    def test_loss_rate_bound(self, rng):
        rxn = self.full_model(rng)
        for _ in range(20):
            f = rng.random(8)
            assert rxn.loss_rate(f).max() <= rxn.loss_rate_bound(f.max()) * (1 + 1e-12)
        multi = ReactionModel(make_power_law_base(8, 2.0),
                              multi=MultiCoagKernel(CoagKernel.constant(8), {3: 1.0}))
        f = rng.random(8)
        assert multi.loss_rate(f).max() <= multi.loss_rate_bound(f.max()) * (1 + 1e-12)

    def test_null(self):
        base = make_power_law_base(4, 2.0)
        assert ReactionModel(base).is_null
        assert ReactionModel(base, coag=CoagKernel.constant(4, 0.0)).is_null
        assert not ReactionModel(base, frag=Fragmentation.uniform_binary(base, 0.1)).is_null

    @pytest.mark.parametrize("kw", [
        {"overflow": "extend"},
        {"overflow": "cutoff", "coag": "plain"},
        {"scat": True, "overflow": "drop"},
        {"coag": "plain", "multi": True},
    ])
    def test_rejects_inconsistent_setups(self, kw):
        base = make_power_law_base(8, 2.0)
        args = {"overflow": kw.get("overflow", "drop")}
        if kw.get("coag") == "plain":
            args["coag"] = CoagKernel.constant(8)
        if kw.get("multi"):
            args["multi"] = MultiCoagKernel(None, {3: 1.0})
        if kw.get("scat"):
            args["coag"] = CoagKernel.constant(8, 1.0, 6)
            args["scat"] = Scattering.halves(base, 6)
        with pytest.raises(ConfigurationError):
            ReactionModel(base, **args)
