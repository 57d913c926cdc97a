import csv

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from datagen.dataset import Dataset, Labeler, build_dataset, export_csv, parse_dataset, read_dataset, write_dataset
from datagen.ground_truth import (
    energy,
    energy_and_gradient,
    example2_closed_form_error_sq,
    lorenz_flow_map,
    pendulum_acceleration,
)
from datagen.sampling import (
    SamplerKind,
    SamplingSpec,
    mixture_spec,
    perturbed_support_spec,
    sample,
    uniform_spec,
)
from learning.kernels import KernelSpec
from utils.errors import FormatError, InputError

LORENZ_FIXED_POINT = np.array([np.sqrt(72.0), np.sqrt(72.0), 27.0])


class TestLorenzFlowMap:
    def test_origin_is_fixed(self):
        assert_array_equal(lorenz_flow_map(np.zeros(3)), np.zeros(3))

    def test_nontrivial_fixed_point(self):
        drift = lorenz_flow_map(LORENZ_FIXED_POINT, tau=0.01) - LORENZ_FIXED_POINT
        assert np.linalg.norm(drift) < 1e-9

    def test_substep_refinement_agrees(self):
        x = np.array([1.0, 2.0, 20.0])
        assert_allclose(lorenz_flow_map(x, 0.01, 10), lorenz_flow_map(x, 0.01, 100), atol=1e-6)

    def test_fourth_order_convergence(self):
        x = np.array([1.0, 1.0, 1.0])
        reference = lorenz_flow_map(x, 0.1, 2000)
        coarse = np.linalg.norm(lorenz_flow_map(x, 0.1, 10) - reference)
        fine = np.linalg.norm(lorenz_flow_map(x, 0.1, 20) - reference)
        assert 12.0 < coarse / fine < 20.0

    def test_batch_matches_points(self):
        points = np.random.default_rng(0).normal(size=(4, 3))
        batch = lorenz_flow_map(points)
        for point, row in zip(points, batch):
            assert_allclose(lorenz_flow_map(point), row, rtol=1e-15)


class TestPendulumAcceleration:
    def test_rest(self):
        assert pendulum_acceleration(0.0, 0.0, 0.0) == 0.0

    def test_horizontal(self):
        assert pendulum_acceleration(np.pi / 2, 0.0, 0.0) == pytest.approx(-0.981)

    def test_inverted_with_control(self):
        assert pendulum_acceleration(np.pi, 1.0, 2.0) == pytest.approx(1.989, abs=1e-12)


class TestEnergy:
    def test_minima_energies(self):
        assert energy(np.array([1.0, 0.0, 0.0])) == pytest.approx(0.05)
        assert energy(np.array([-1.0, 0.0, 0.0])) == pytest.approx(0.45)

    def test_minima_are_critical(self):
        for point in ([1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]):
            _, grad = energy_and_gradient(np.array(point))
            assert_allclose(grad, np.zeros(3), atol=1e-15)

    def test_gradient_matches_finite_differences(self):
        h = 1e-5
        for x in np.random.default_rng(1).uniform(-1.5, 1.5, size=(10, 3)):
            _, grad = energy_and_gradient(x)
            fd = [(energy(x + h * e) - energy(x - h * e)) / (2.0 * h) for e in np.eye(3)]
            assert_allclose(grad, fd, rtol=1e-8, atol=1e-8)


class TestExample2ClosedForm:
    def test_matches_direct_euler_rollout(self):
        tau, steps = 0.1, 20
        surrogate, truth, total = 1.0, 1.0, 0.0
        for _ in range(steps):
            surrogate = surrogate + tau * (-0.5)
            truth = truth + tau * (-abs(truth))
            total += (surrogate - truth) ** 2
        assert example2_closed_form_error_sq(1.0, tau, steps) == pytest.approx(total, abs=1e-10)


class TestSampling:
    def test_uniform_is_seeded_and_in_bounds(self):
        spec = uniform_spec([-25, -25, 0], [25, 25, 50])
        a, b = sample(spec, 500, 3), sample(spec, 500, 3)
        assert_array_equal(a, b)
        assert np.all(a >= [-25, -25, 0]) and np.all(a < [25, 25, 50])
        assert not np.array_equal(a, sample(spec, 500, 4))

    def test_alpha_zero_mixture_uses_base_only(self):
        base = uniform_spec([0.0], [1.0])
        perturbed = perturbed_support_spec([[100.0]], 0.01)
        points = sample(mixture_spec(base, perturbed, 0.0), 1000, 0)
        assert np.all((points >= 0.0) & (points < 1.0))

    def test_mixture_fraction(self):
        base = uniform_spec([0.0], [1.0])
        perturbed = perturbed_support_spec([[100.0]], 0.01)
        points = sample(mixture_spec(base, perturbed, 0.25), 4000, 0)
        assert np.mean(points[:, 0] > 50.0) == pytest.approx(0.25, abs=0.03)

    def test_clipped_control_channel(self):
        spec = uniform_spec([0, -5, -11], [2 * np.pi, 5, 11], [-np.inf, -np.inf, -10], [np.inf, np.inf, 10])
        u = sample(spec, 2000, 0)[:, 2]
        assert np.all((u >= -10.0) & (u <= 10.0))
        assert np.any(u == -10.0) and np.any(u == 10.0)

    def test_invalid_specs(self):
        with pytest.raises(InputError):
            uniform_spec([1.0], [0.0])
        with pytest.raises(InputError):
            SamplingSpec(kind=SamplerKind.MIXTURE, alpha=1.5)
        with pytest.raises(InputError):
            sample(uniform_spec([0.0], [1.0]), 0, 0)

    @staticmethod
    def _boltzmann_mean_energy(beta_inv):
        axis = np.linspace(-3.0, 3.0, 121)
        grid = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
        values = energy(grid)
        weights = np.exp(-(values - values.min()) / beta_inv)
        return float(np.sum(values * weights) / np.sum(weights))

    @pytest.mark.slow
    def test_langevin_mean_energy_matches_quadrature(self):
        spec = SamplingSpec(kind=SamplerKind.LANGEVIN, beta_inv=1.0)
        samples = sample(spec, 100_000, 0)
        reference = self._boltzmann_mean_energy(1.0)
        assert np.mean(energy(samples)) == pytest.approx(reference, rel=0.1)

    @pytest.mark.slow
    def test_langevin_concentrates_at_low_temperature(self):
        means = [
            np.mean(energy(sample(SamplingSpec(kind=SamplerKind.LANGEVIN, beta_inv=t), 20_000, 0)))
            for t in (1.0, 0.2, 0.1)
        ]
        assert means[0] > means[1] > means[2]


class TestDataset:
    @pytest.fixture
    def dataset(self):
        return build_dataset(uniform_spec([-1.0], [1.0]), 50, Labeler.EXAMPLE2, 5, field_alpha=1.0)

    def test_labels_and_provenance(self, dataset):
        assert_allclose(dataset.labels, -np.abs(dataset.inputs))
        assert dataset.provenance["labeler"] == "example2"
        assert dataset.provenance["sampling"]["kind"] == "uniform"
        assert dataset.seed == 5

    def test_build_is_deterministic(self, dataset):
        again = build_dataset(uniform_spec([-1.0], [1.0]), 50, Labeler.EXAMPLE2, 5, field_alpha=1.0)
        assert_array_equal(again.inputs, dataset.inputs)

    def test_mixture_provenance(self):
        spec = mixture_spec(uniform_spec([0.0], [1.0]), perturbed_support_spec([[0.5]], 0.01), 0.25)
        dataset = build_dataset(spec, 10, Labeler.EXAMPLE2, 0)
        assert dataset.provenance["sampling"]["kind"] == "mixture"
        assert dataset.provenance["sampling"]["alpha"] == 0.25

    def test_round_trip_is_bit_exact(self, dataset, tmp_path):
        with_densities = dataset.with_densities(KernelSpec(0.01))
        path = write_dataset(with_densities, tmp_path / "data.tssd")
        loaded = read_dataset(path, expected_input_dim=1)
        assert loaded.inputs.tobytes() == dataset.inputs.tobytes()
        assert loaded.labels.tobytes() == dataset.labels.tobytes()
        assert loaded.densities.tobytes() == with_densities.densities.tobytes()
        assert loaded.density_spec == KernelSpec(0.01)
        assert loaded.provenance == dataset.provenance

    def test_rewrite_gives_identical_bytes(self, dataset, tmp_path):
        first = write_dataset(dataset, tmp_path / "a.tssd").read_bytes()
        second = write_dataset(read_dataset(tmp_path / "a.tssd"), tmp_path / "b.tssd").read_bytes()
        assert first == second

    def test_input_dimension_mismatch(self, dataset, tmp_path):
        path = write_dataset(dataset, tmp_path / "data.tssd")
        with pytest.raises(FormatError):
            read_dataset(path, expected_input_dim=3)

    def test_malformed_files(self, dataset, tmp_path):
        data = write_dataset(dataset, tmp_path / "data.tssd").read_bytes()
        with pytest.raises(FormatError):
            parse_dataset(b"TSSX" + data[4:])
        with pytest.raises(FormatError):
            parse_dataset(data[:-8])

    def test_file_without_provenance_line(self):
        rows = np.array([[0.5, -0.5], [-0.25, -0.25]], dtype="<f8")
        data = b"TSSD\x01" + b"2 1 1 7 abc\n" + rows.tobytes()
        loaded = parse_dataset(data)
        assert_array_equal(loaded.inputs, [[0.5], [-0.25]])
        assert_array_equal(loaded.labels, [[-0.5], [-0.25]])
        assert loaded.seed == 7
        assert loaded.provenance == {}
        assert loaded.densities is None

        density = b"density 0.01 6.0 1.0\n" + np.array([0.2, 0.3], dtype="<f8").tobytes()
        loaded = parse_dataset(data + density)
        assert_array_equal(loaded.densities, [0.2, 0.3])
        assert loaded.density_spec == KernelSpec(0.01)

    def test_malformed_density_header(self, dataset, tmp_path):
        data = write_dataset(dataset, tmp_path / "data.tssd").read_bytes()
        with pytest.raises(FormatError):
            parse_dataset(data + b"density abc 6.0 1.0\n" + np.zeros(50).tobytes())
        with pytest.raises(FormatError):
            parse_dataset(data + b"density -1 6.0 1.0\n" + np.zeros(50).tobytes())

    def test_row_count_mismatch(self):
        with pytest.raises(InputError):
            Dataset(inputs=[[0.0], [1.0]], labels=[[0.0]])

    def test_csv_export(self, dataset, tmp_path):
        path = export_csv(dataset, tmp_path / "data.csv")
        with open(path, newline="") as handle:
            rows = list(csv.reader(handle))
        assert rows[0] == ["x0", "y0"]
        assert len(rows) == 51
        assert float(rows[1][0]) == dataset.inputs[0, 0]
