import numpy as np
import pytest

from cylbill import builders
from cylbill.classify import (
    EnumerationGuardError,
    SplittingWitness,
    commutant_dimension,
    count_transitive_blocks,
    is_transitive,
    is_transitive_sequence,
    is_transverse,
    non_orthogonality_graph,
    splits_according_to,
)
from cylbill.geometry import Subspace, complement, random_subspace, span_of
from conftest import make_sphere_system, make_two_block_system


def _span(*vecs):
    return Subspace.span(list(vecs))


E1, E2, E3, E4 = np.eye(4)


class TestGraph:
    def test_shared_direction_edge(self):
        g = non_orthogonality_graph([
            _span([1, 0, 0], [0, 1, 0]),
            _span([0, 1, 0], [0, 0, 1]),
        ])
        assert set(g.edges) == {(0, 1)}

    def test_orthogonal_no_edge(self):
        g = non_orthogonality_graph([_span(E1, E2), _span(E3, E4)])
        assert len(g.edges) == 0

    def test_hard_ball_pair_overlap_structure(self):
        system, emb = builders.hard_ball_system(
            builders.HardBallParams(4, 2, (1.0, 1.0, 1.0, 1.0), 0.1)
        )
        g = non_orthogonality_graph(system.base_spaces())
        for (a, b) in g.edges:
            assert set(emb.pairs[a]) & set(emb.pairs[b])
        for a in range(system.k):
            for b in range(a + 1, system.k):
                if set(emb.pairs[a]) & set(emb.pairs[b]):
                    assert g.has_edge(a, b)


class TestTransitive:
    def test_overlapping_planes_in_3space(self):
        bases = [_span([1, 0, 0], [0, 1, 0]), _span([0, 1, 0], [0, 0, 1])]
        ok, witness = is_transitive(bases)
        assert ok and witness is None
        assert commutant_dimension(bases) == 1

    def test_orthogonal_blocks_split(self):
        bases = [_span(E1, E2), _span(E3, E4)]
        ok, witness = is_transitive(bases)
        assert not ok
        witness.check({i: b for i, b in enumerate(bases)})
        assert {witness.b1.dim, witness.b2.dim} == {2}
        assert commutant_dimension(bases) >= 2

    def test_full_space_single(self):
        ok, _ = is_transitive([Subspace.full(3)])
        assert ok
        assert commutant_dimension([Subspace.full(3)]) == 1

    def test_span_deficient(self):
        bases = [_span(E1, E2)]
        ok, witness = is_transitive(bases)
        assert not ok
        assert witness.b2.dim == 2

    def test_empty_list(self):
        ok, witness = is_transitive([], ambient_dim=3)
        assert not ok and witness.degenerate
        with pytest.raises(ValueError):
            is_transitive([])

    def test_invariance_permutation_and_rotation(self, rng):
        for _ in range(10):
            d = int(rng.integers(3, 6))
            bases = [random_subspace(rng, d, int(rng.integers(2, d + 1)))
                     for _ in range(3)]
            base_verdict = is_transitive(bases)[0]
            perm = rng.permutation(3)
            assert is_transitive([bases[i] for i in perm])[0] == base_verdict
            q, _ = np.linalg.qr(rng.standard_normal((d, d)))
            rotated = [Subspace(d, q @ b.basis) for b in bases]
            assert is_transitive(rotated)[0] == base_verdict

    def test_oracle_agreement_sample(self, rng):
        agree = 0
        total = 40
        for i in range(total):
            d = int(rng.integers(2, 7))
            if rng.random() < 0.45 and d >= 4:
                split = int(rng.integers(2, d - 1))
                q, _ = np.linalg.qr(rng.standard_normal((d, d)))
                b1 = Subspace(d, q[:, :split])
                b2 = Subspace(d, q[:, split:])
                bases = []
                for _ in range(int(rng.integers(1, 4))):
                    part = b1 if rng.random() < 0.5 else b2
                    if part.dim < 2:
                        part = b1 if b1.dim >= 2 else b2
                    k = int(rng.integers(2, part.dim + 1))
                    mix = part.basis @ np.linalg.qr(
                        rng.standard_normal((part.dim, k)))[0][:, :k]
                    bases.append(Subspace(d, mix))
            else:
                bases = [random_subspace(rng, d, int(rng.integers(2, d + 1)))
                         for _ in range(int(rng.integers(1, 4)))]
            structural = is_transitive(bases)[0]
            oracle = commutant_dimension(bases) == 1
            assert structural == oracle
            agree += 1
        assert agree == total


class TestTransverse:
    def test_hard_ball_transverse(self):
        system, _ = builders.hard_ball_system(
            builders.HardBallParams(3, 2, (1.0, 1.0, 1.0), 0.1)
        )
        ok, counter = is_transverse(system)
        assert ok and counter is None

    def test_two_block_not_transverse(self):
        system = make_two_block_system()
        ok, counter = is_transverse(system)
        assert not ok
        # {0} alone escapes via the orthogonal L_1; the full pair does not
        assert counter == (0, 1)

    def test_transverse_implies_transitive(self, rng):
        for n in (2, 3):
            system, _ = builders.hard_ball_system(
                builders.HardBallParams(n, 2, tuple([1.0] * n), 0.1)
            )
            if is_transverse(system)[0]:
                assert is_transitive(system.base_spaces())[0]

    def test_enumeration_guard(self):
        system = make_sphere_system(2)
        system.cylinders = system.cylinders * 30
        with pytest.raises(EnumerationGuardError):
            is_transverse(system)

    def test_sphere_alone_transverse(self):
        # one full-space base: the only splittable subset is empty
        assert is_transverse(make_sphere_system(3))[0]


class TestSequences:
    def test_single_sphere_sequence(self):
        system = make_sphere_system(3)
        assert is_transitive_sequence([0, 0, 0], system)

    def test_one_block_not_transitive(self):
        system = make_two_block_system()
        assert not is_transitive_sequence([0, 0], system)
        assert is_transitive_sequence([0, 1], system) == \
            is_transitive(system.base_spaces())[0]

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            is_transitive_sequence([5], make_sphere_system(2))

    def test_block_counting_no_transitive_prefix(self):
        system = make_two_block_system()
        assert count_transitive_blocks([0, 0, 0, 0], system) == 0

    def test_block_counting_concatenation(self):
        system = make_sphere_system(3)
        assert count_transitive_blocks([0] * 5, system) == 5

    def test_block_counting_mixed(self):
        system = make_two_block_system()
        # (0,1) spans R^4; orthogonal blocks are NOT transitive together
        assert count_transitive_blocks([0, 1, 0, 1], system) == 0

    def test_greedy_maximal_vs_random_partitions(self, rng):
        system, _ = builders.hard_ball_system(
            builders.HardBallParams(3, 2, (1.0, 1.0, 1.0), 0.1)
        )
        labels = [int(x) for x in rng.integers(0, 3, size=40)]
        greedy = count_transitive_blocks(labels, system)
        for _ in range(40):
            # random partition into consecutive pieces
            cuts = sorted(rng.choice(np.arange(1, 40), size=5, replace=False))
            pieces = np.split(np.array(labels), cuts)
            complete = sum(
                1 for p in pieces if p.size
                and is_transitive_sequence(list(p), system)
            )
            assert greedy >= complete


class TestSplitsAccordingTo:
    def test_one_block_respects_natural_splitting(self):
        system = make_two_block_system()
        b1 = system.base_space(0)
        b2 = complement(b1)
        assert splits_according_to({0}, b1, b2, system)
        assert splits_according_to({0, 1}, b1, b2, system)

    def test_straddling_base_fails(self):
        system = make_two_block_system()
        q, _ = np.linalg.qr(np.array([[1.0, 0], [0, 1], [1, 0], [0, 1]]))
        b1 = Subspace(4, q[:, :2])
        b2 = complement(b1)
        assert not splits_according_to({0}, b1, b2, system)

    def test_invalid_splitting_rejected(self):
        system = make_two_block_system()
        b1 = system.base_space(0)
        with pytest.raises(ValueError):
            splits_according_to({0}, b1, b1, system)

    def test_consistency_with_transitivity(self, rng):
        system, _ = builders.hard_ball_system(
            builders.HardBallParams(3, 2, (1.0, 1.0, 1.0), 0.1)
        )
        labels = {0, 1, 2}
        assert is_transitive_sequence(sorted(labels), system)
        # a transitive collided set admits no splitting at all: probe a few
        for _ in range(20):
            b1 = random_subspace(rng, 4, int(rng.integers(1, 4)))
            b2 = complement(b1)
            assert not splits_according_to(labels, b1, b2, system)


class TestWitnessInvariants:
    def test_emitted_witnesses_pass_check(self, rng):
        for _ in range(20):
            d = 4
            q, _ = np.linalg.qr(rng.standard_normal((d, d)))
            bases = [Subspace(d, q[:, :2]), Subspace(d, q[:, 2:])]
            ok, witness = is_transitive(bases)
            assert not ok
            witness.check({i: b for i, b in enumerate(bases)})

    def test_bad_witness_rejected(self):
        b1 = Subspace.span([E1, E2])
        with pytest.raises(ValueError):
            SplittingWitness(b1, Subspace.span([E2, E3]), {}).check()
