"""
Test suite for the network core: activations, forward pass, exact gradients,
Adam, training and checkpoints
"""
import math
import struct
import sys
import tempfile
import unittest
from pathlib import Path
from unittest import mock

import numpy as np
from hypothesis import assume, given, settings
from hypothesis import strategies as st

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))
sys.path.insert(0, str(Path(__file__).parent))

from caprelu import nn_core
from caprelu.attacks import AttackSpec
from caprelu.data_io import ImageDataset
from caprelu.errors import ActivationError, CheckpointError, DatasetError, ShapeError
from caprelu.nn_core import (CHECKPOINT_MAGIC, ActivationKind, AdamState, CrossEntropy, DenseLayer,
                             Logit, LogitCombination, LogitMargin, Network, activation_apply,
                             activation_derivative, adam_step, build_network, checkpoint_provenance,
                             cross_entropy, forward, input_gradient, load_checkpoint,
                             loss_and_param_grads, save_checkpoint, set_cap, softmax, train)
from synthetic import blob_dataset, linear_net

KINK_MARGIN = 1e-3
H = 1e-5


def central_difference(f, arr, h=H):
    """Numerical gradient of scalar f() with respect to arr (perturbed in place)"""
    grad = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        old = arr[idx]
        arr[idx] = old + h
        f_plus = f()
        arr[idx] = old - h
        f_minus = f()
        arr[idx] = old
        grad[idx] = (f_plus - f_minus) / (2 * h)
    return grad


def relative_error(a, b):
    a = np.concatenate([np.ravel(x) for x in a]) if isinstance(a, list) else np.ravel(a)
    b = np.concatenate([np.ravel(x) for x in b]) if isinstance(b, list) else np.ravel(b)
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


def kink_distance(net, x):
    """Smallest distance of any ReLU/capped pre-activation to a kink"""
    trace = forward(net, x)
    dist = np.inf
    for layer, z in zip(net.layers, trace.pre):
        if layer.activation.name in ("relu", "capped_relu"):
            dist = min(dist, np.min(np.abs(z)))
        if layer.activation.name == "capped_relu":
            dist = min(dist, np.min(np.abs(z - layer.activation.beta)))
    return dist


class TestActivations(unittest.TestCase):
    """Activation values, derivatives and parsing"""

    def test_capped_relu_values(self):
        self.assertEqual(activation_apply(ActivationKind.capped(0.1), 0.5), 0.1)
        self.assertEqual(activation_apply(ActivationKind.capped(0.1), -1.0), 0.0)
        self.assertEqual(activation_apply(ActivationKind.capped(0.1), 0.05), 0.05)

    def test_capped_relu_derivative_with_kinks(self):
        kind = ActivationKind.capped(0.1)
        self.assertEqual(activation_derivative(kind, 0.05), 1.0)
        self.assertEqual(activation_derivative(kind, 0.5), 0.0)
        self.assertEqual(activation_derivative(kind, 0.1), 0.0)
        self.assertEqual(activation_derivative(kind, 0.0), 0.0)

    def test_other_kinds(self):
        self.assertEqual(activation_apply("relu", -2.0), 0.0)
        self.assertEqual(activation_apply("relu", 3.0), 3.0)
        self.assertAlmostEqual(activation_apply(ActivationKind.sigmoid(2.0), 0.0), 0.5)
        self.assertAlmostEqual(activation_apply(ActivationKind.sigmoid(2.0), 1.0), 1 / (1 + math.exp(-2.0)))
        self.assertAlmostEqual(activation_apply(ActivationKind.tanh(5.0), 0.1), math.tanh(0.5))
        self.assertEqual(activation_apply("identity", -7.5), -7.5)
        self.assertAlmostEqual(activation_derivative(ActivationKind.tanh(2.0), 0.0), 2.0)
        self.assertAlmostEqual(activation_derivative(ActivationKind.sigmoid(4.0), 0.0), 1.0)
        self.assertEqual(activation_derivative("identity", 3.0), 1.0)

    def test_sigmoid_does_not_overflow(self):
        out = ActivationKind.sigmoid(10.0).apply(np.array([-1e4, 1e4]))
        np.testing.assert_array_equal(out, [0.0, 1.0])

    def test_parse(self):
        self.assertEqual(ActivationKind.parse("capped:0.1"), ActivationKind.capped(0.1))
        self.assertEqual(ActivationKind.parse("tanh:5"), ActivationKind.tanh(5.0))
        self.assertEqual(ActivationKind.parse("ReLU"), ActivationKind.relu())
        self.assertEqual(str(ActivationKind.capped(0.01)), "capped_relu:0.01")

    def test_invalid_parameters(self):
        with self.assertRaises(ActivationError):
            ActivationKind.capped(0.0)
        with self.assertRaises(ActivationError):
            ActivationKind.capped(-1.0)
        with self.assertRaises(ActivationError):
            ActivationKind.sigmoid(0.5)
        with self.assertRaises(ActivationError):
            ActivationKind.parse("swish")
        with self.assertRaises(ActivationError):
            ActivationKind("relu", 2.0)

    @settings(max_examples=200, deadline=None)
    @given(beta=st.floats(1e-3, 100.0),
           z1=st.floats(-1e3, 1e3, allow_nan=False),
           z2=st.floats(-1e3, 1e3, allow_nan=False))
    def test_clamp_law_and_monotonicity(self, beta, z1, z2):
        kind = ActivationKind.capped(beta)
        lo, hi = min(z1, z2), max(z1, z2)
        a_lo, a_hi = kind.apply(lo), kind.apply(hi)
        self.assertTrue(0.0 <= a_lo <= beta)
        self.assertTrue(0.0 <= a_hi <= beta)
        self.assertLessEqual(a_lo, a_hi)

    @settings(max_examples=200, deadline=None)
    @given(name=st.sampled_from(["relu", "sigmoid", "tanh", "identity"]),
           scale=st.floats(1.0, 10.0),
           z1=st.floats(-50, 50, allow_nan=False),
           z2=st.floats(-50, 50, allow_nan=False))
    def test_monotone_for_every_kind(self, name, scale, z1, z2):
        kind = ActivationKind(name, scale if name in ("sigmoid", "tanh") else None)
        lo, hi = min(z1, z2), max(z1, z2)
        self.assertLessEqual(kind.apply(lo), kind.apply(hi))


class TestNetworkAndForward(unittest.TestCase):
    """Construction, forward pass and set_cap"""

    def test_build_network_chains_dimensions(self):
        net = build_network([784, 392, 196, 10], ["relu", "relu", "identity"], seed=42)
        self.assertEqual(len(net.layers), 3)
        self.assertEqual(net.dims, [784, 392, 196, 10])
        self.assertEqual(net.layers[1].weights.shape, (196, 392))
        self.assertEqual(net.hidden_layer_indices, [0, 1])

    def test_initialization_range_and_determinism(self):
        a = build_network([50, 20, 10], ["relu", "identity"], seed=7)
        b = build_network([50, 20, 10], ["relu", "identity"], seed=7)
        c = build_network([50, 20, 10], ["relu", "identity"], seed=8)
        limit = math.sqrt(6 / 50)
        self.assertTrue(np.all(np.abs(a.layers[0].weights) <= limit))
        self.assertTrue(np.all(a.layers[0].bias == 0))
        for pa, pb in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(pa, pb)
        self.assertFalse(np.array_equal(a.layers[0].weights, c.layers[0].weights))

    def test_invalid_networks(self):
        with self.assertRaises(ShapeError):
            build_network([10, 5, 3], ["relu"])
        with self.assertRaises(ShapeError):
            build_network([10, 0, 3], ["relu", "identity"])
        with self.assertRaises(ActivationError):
            build_network([10, 5, 3], ["relu", "relu"])
        with self.assertRaises(ShapeError):
            Network([DenseLayer(np.eye(3), np.zeros(3), "relu"),
                     DenseLayer(np.eye(4), np.zeros(4), "identity")])
        with self.assertRaises(ShapeError):
            DenseLayer(np.eye(3), np.zeros(2), "relu")

    def test_zero_weight_network_outputs_bias(self):
        bias = np.array([0.3, -0.2, 1.5])
        net = Network([DenseLayer(np.zeros((4, 5)), np.zeros(4), "relu"),
                       DenseLayer(np.zeros((3, 4)), bias, "identity")])
        logits = forward(net, np.random.default_rng(0).uniform(size=(6, 5))).logits
        np.testing.assert_array_equal(logits, np.tile(bias, (6, 1)))

    def test_identity_capped_layer_clamps(self):
        net = Network([DenseLayer(np.eye(3), np.zeros(3), ActivationKind.capped(0.5)),
                       DenseLayer(np.eye(3), np.zeros(3), "identity")])
        trace = forward(net, np.array([[0.8, 0.9, 1.0]]))
        np.testing.assert_array_equal(trace.post[0], [[0.5, 0.5, 0.5]])
        np.testing.assert_array_equal(trace.logits, [[0.5, 0.5, 0.5]])

    def test_trace_shapes_and_single_sample(self):
        net = build_network([12, 7, 5, 10], ["relu", "relu", "identity"], seed=1)
        x = np.random.default_rng(0).uniform(size=(3, 12))
        trace = forward(net, x)
        self.assertEqual([p.shape for p in trace.post], [(3, 7), (3, 5), (3, 10)])
        self.assertEqual(len(trace.hidden), 2)
        single = forward(net, x[0])
        np.testing.assert_allclose(single.logits[0], trace.logits[0], rtol=0, atol=1e-12)
        with self.assertRaises(ShapeError):
            forward(net, np.zeros((2, 11)))

    def test_softmax_normalization_and_predict(self):
        net = build_network([6, 8, 4], ["relu", "identity"], seed=3)
        x = np.random.default_rng(1).uniform(size=(10, 6))
        proba = net.predict_proba(x)
        np.testing.assert_allclose(proba.sum(axis=1), 1.0, rtol=0, atol=1e-12)
        np.testing.assert_array_equal(net.predict(x), np.argmax(proba, axis=1))

    def test_predict_breaks_ties_with_lowest_index(self):
        net = linear_net(np.zeros((4, 3)))
        np.testing.assert_array_equal(net.predict(np.ones((2, 3))), [0, 0])

    def test_set_cap_bounds_layer_and_shares_weights(self):
        net = build_network([10, 8, 6, 3], ["relu", "relu", "identity"], seed=0)
        capped = set_cap(net, {1}, 0.05)
        self.assertIs(capped.layers[1].weights, net.layers[1].weights)
        self.assertEqual(capped.cap_values, [None, 0.05, None])
        self.assertEqual(net.cap_values, [None, None, None])
        x = np.random.default_rng(0).uniform(size=(20, 10))
        post = forward(capped, x).post[1]
        self.assertTrue(np.all(post <= 0.05))
        self.assertTrue(np.all(post >= 0.0))

    def test_set_cap_large_beta_matches_uncapped(self):
        net = build_network([10, 8, 6, 3], ["relu", "relu", "identity"], seed=0)
        x = np.random.default_rng(0).uniform(size=(20, 10))
        capped = set_cap(net, [0, 1], 1e9)
        np.testing.assert_array_equal(forward(capped, x).logits, forward(net, x).logits)

    def test_set_cap_same_beta_is_a_no_op(self):
        net = set_cap(build_network([10, 8, 3], ["relu", "identity"], seed=0), [0], 0.1)
        x = np.random.default_rng(2).uniform(size=(5, 10))
        again = set_cap(net, [0], 0.1)
        np.testing.assert_array_equal(forward(again, x).logits, forward(net, x).logits)

    def test_set_cap_rejects_bad_layers(self):
        net = build_network([10, 8, 6, 3], ["sigmoid:2", "relu", "identity"], seed=0)
        with self.assertRaises(ActivationError):
            set_cap(net, [2], 0.1)
        with self.assertRaises(ActivationError):
            set_cap(net, [0], 0.1)
        with self.assertRaises(ActivationError):
            set_cap(net, [5], 0.1)
        with self.assertRaises(ActivationError):
            set_cap(net, [1], 0.0)


class TestGradients(unittest.TestCase):
    """Analytic gradients against central finite differences"""

    def test_uniform_logits_loss_is_log_ten(self):
        net = linear_net(np.zeros((10, 4)))
        loss, _ = loss_and_param_grads(net, np.full((3, 4), 0.5), [0, 4, 9])
        self.assertAlmostEqual(loss, math.log(10), places=12)

    def _param_check(self, net, x, labels):
        _, analytic = loss_and_param_grads(net, x, labels)
        numeric = [central_difference(lambda: loss_and_param_grads(net, x, labels)[0], p)
                   for p in net.parameters()]
        return relative_error(analytic, numeric)

    def test_param_gradients_16_8_4(self):
        for kind in ["relu", "capped:0.5", "sigmoid:2", "tanh:1.5", "identity"]:
            with self.subTest(kind=kind):
                for seed in range(50):
                    net = build_network([16, 8, 4], [kind, "identity"], seed=seed)
                    x = np.random.default_rng(seed).uniform(size=(4, 16))
                    if kink_distance(net, x) > KINK_MARGIN:
                        break
                self.assertLess(self._param_check(net, x, [0, 1, 2, 3]), 1e-4)

    def test_input_gradients_for_every_objective(self):
        net = build_network([16, 8, 4], ["tanh:2", "identity"], seed=5)
        x = np.random.default_rng(5).uniform(size=(3, 16))
        labels = np.array([0, 3, 1])
        objectives = [
            (CrossEntropy(labels), lambda z: cross_entropy(z, labels).sum()),
            (Logit(2), lambda z: z[:, 2].sum()),
            (LogitCombination([1.0, 1.0, 0.0, 1.0]), lambda z: (z[:, 0] + z[:, 1] + z[:, 3]).sum()),
            (LogitMargin(labels, [1, 0, 2]), lambda z: (z[[0, 1, 2], labels] - z[[0, 1, 2], [1, 0, 2]]).sum()),
        ]
        for objective, value in objectives:
            with self.subTest(objective=type(objective).__name__):
                analytic = input_gradient(net, x, objective)
                xx = x.copy()
                numeric = central_difference(lambda: value(forward(net, xx).logits), xx)
                self.assertLess(relative_error(analytic, numeric), 1e-4)

    def test_logit_gradient_of_linear_net_is_weight_product(self):
        net = build_network([6, 5, 4], ["identity", "identity"], seed=2)
        product = net.layers[1].weights @ net.layers[0].weights
        for x in np.random.default_rng(0).uniform(size=(3, 6)):
            np.testing.assert_allclose(input_gradient(net, x, Logit(1)), product[1], rtol=1e-12, atol=1e-12)

    def test_saturated_capped_layer_gives_zero_gradient(self):
        net = Network([DenseLayer(np.zeros((5, 8)), np.ones(5), ActivationKind.capped(0.1)),
                       DenseLayer(np.random.default_rng(0).normal(size=(3, 5)), np.zeros(3), "identity")])
        x = np.random.default_rng(1).uniform(size=(4, 8))
        np.testing.assert_array_equal(input_gradient(net, x, CrossEntropy([0, 1, 2, 0])), np.zeros((4, 8)))

    def test_logit_class_out_of_range(self):
        net = build_network([4, 3], ["identity"], seed=0)
        with self.assertRaises(ShapeError):
            input_gradient(net, np.zeros(4), Logit(3))
        with self.assertRaises(ShapeError):
            loss_and_param_grads(net, np.zeros((2, 4)), [0, 7])

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2 ** 16),
           kind=st.sampled_from(["relu", "capped:0.3", "capped:2", "sigmoid:1", "sigmoid:3",
                                 "tanh:1", "tanh:2", "identity"]))
    def test_random_small_networks(self, seed, kind):
        rng = np.random.default_rng(seed)
        n_hidden = int(rng.integers(1, 3))
        dims = [int(d) for d in rng.integers(2, 33, size=n_hidden + 1)] + [int(rng.integers(2, 11))]
        net = build_network(dims, [kind] * n_hidden + ["identity"], seed=seed)
        x = rng.uniform(size=(3, dims[0]))
        labels = rng.integers(0, dims[-1], size=3)
        assume(kink_distance(net, x) > KINK_MARGIN)

        self.assertLess(self._param_check(net, x, labels), 1e-4)
        analytic = input_gradient(net, x, CrossEntropy(labels))
        xx = x.copy()
        numeric = central_difference(lambda: cross_entropy(forward(net, xx).logits, labels).sum(), xx)
        self.assertLess(relative_error(analytic, numeric), 1e-4)


class TestAdam(unittest.TestCase):
    """Bias-corrected Adam updates"""

    def test_first_step_from_zero_moments(self):
        p = np.array([0.0])
        state = AdamState(lr=0.001)
        adam_step(state, [p], [np.array([1.0])])
        self.assertAlmostEqual(p[0], -0.001 / (1 + 1e-8), places=15)
        self.assertEqual(state.t, 1)

    def test_zero_gradient_leaves_parameters(self):
        p = np.array([1.0, -2.0])
        state = AdamState()
        adam_step(state, [p], [np.zeros(2)])
        np.testing.assert_array_equal(p, [1.0, -2.0])
        self.assertEqual(state.t, 1)

    def test_constant_gradient_moves_by_lr(self):
        p = np.array([0.0])
        state = AdamState(lr=0.01)
        for _ in range(100):
            before = p[0]
            adam_step(state, [p], [np.array([3.0])])
        self.assertAlmostEqual(before - p[0], 0.01, places=6)

    def test_minimizes_quadratic(self):
        p = np.array([0.0, 10.0])
        state = AdamState(lr=0.05)
        for _ in range(3000):
            adam_step(state, [p], [2 * (p - np.array([3.0, -1.0]))])
        np.testing.assert_allclose(p, [3.0, -1.0], atol=5e-2)

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            adam_step(AdamState(), [np.zeros(3)], [np.zeros(2)])
        with self.assertRaises(ShapeError):
            adam_step(AdamState(), [np.zeros(3)], [])


class TestTraining(unittest.TestCase):
    """Mini-batch Adam training on synthetic blobs"""

    def test_learns_separable_blobs(self):
        data = blob_dataset(n=300, dim=16)
        net = build_network([16, 32, 10], ["relu", "identity"], seed=0)
        history = train(net, data, epochs=30, batch_size=32, lr=0.01, seed=0)
        self.assertEqual(len(history.records), 30)
        self.assertLess(history.losses[-1], history.losses[0])
        self.assertGreaterEqual(history.accuracies[-1], 0.9)

    def test_loss_mostly_non_increasing(self):
        data = blob_dataset(n=500, dim=16, seed=4)
        net = build_network([16, 32, 10], ["relu", "identity"], seed=0)
        history = train(net, data, epochs=10, batch_size=50, lr=0.005, seed=0)
        increases = int(np.sum(np.diff(history.losses) > 0))
        self.assertLessEqual(increases, 2, history.losses)

    def test_progress_bar_follows_debug_logging(self):
        data = blob_dataset(n=20, dim=16)
        net = build_network([16, 8, 10], ["relu", "identity"], seed=0)
        with mock.patch("caprelu.nn_core.trange", wraps=nn_core.trange) as bar:
            train(net, data, epochs=1)
            train(net, data, epochs=1, progress=True)
            with self.assertLogs("caprelu.nn_core", level="DEBUG"):
                train(net, data, epochs=1)
        self.assertEqual([call.kwargs["disable"] for call in bar.call_args_list], [True, False, False])

    def test_identical_seeds_give_identical_parameters(self):
        data = blob_dataset(n=100, dim=16)
        nets = []
        for _ in range(2):
            net = build_network([16, 8, 10], ["capped:0.5", "identity"], seed=3)
            train(net, data, epochs=2, batch_size=16, seed=11)
            nets.append(net)
        for a, b in zip(nets[0].parameters(), nets[1].parameters()):
            np.testing.assert_array_equal(a, b)

    def test_zero_epochs_leaves_network(self):
        data = blob_dataset(n=20, dim=16)
        net = build_network([16, 8, 10], ["relu", "identity"], seed=0)
        before = [p.copy() for p in net.parameters()]
        history = train(net, data, epochs=0)
        self.assertEqual(history.records, [])
        for a, b in zip(before, net.parameters()):
            np.testing.assert_array_equal(a, b)

    def test_empty_dataset(self):
        net = build_network([16, 10], ["identity"], seed=0)
        with self.assertRaises(DatasetError):
            train(net, ImageDataset(np.zeros((0, 16)), np.zeros(0), image_shape=(4, 4)), epochs=1)

    def test_adversarial_training_runs(self):
        data = blob_dataset(n=60, dim=16)
        for mixed in (False, True):
            net = build_network([16, 8, 10], ["relu", "identity"], seed=0)
            history = train(net, data, epochs=2, batch_size=20, adversary=AttackSpec.fgsm(0.05), mixed=mixed)
            self.assertEqual(len(history.records), 2)
            self.assertTrue(all(np.isfinite(history.losses)))


class TestCheckpoints(unittest.TestCase):
    """Binary checkpoint round-trip and corruption handling"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / "net.crlu"
        net = build_network([12, 9, 7, 5], ["relu", "sigmoid:3", "identity"], seed=4)
        self.net = set_cap(net, [0], 0.25)

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip_gives_identical_logits(self):
        save_checkpoint(self.net, self.path, provenance={"note": "unit"})
        loaded = load_checkpoint(self.path)
        x = np.random.default_rng(0).uniform(size=(4, 12))
        np.testing.assert_array_equal(forward(loaded, x).logits, forward(self.net, x).logits)
        self.assertEqual(loaded.cap_values, [0.25, None, None])
        self.assertEqual(loaded.activations, self.net.activations)
        self.assertEqual(checkpoint_provenance(self.path), {"note": "unit"})

    def test_header_layout(self):
        save_checkpoint(self.net, self.path)
        data = self.path.read_bytes()
        self.assertEqual(data[:4], CHECKPOINT_MAGIC)
        version, _ = struct.unpack("<II", data[4:12])
        self.assertEqual(version, 1)

    def test_truncated_file(self):
        save_checkpoint(self.net, self.path)
        data = self.path.read_bytes()
        for cut in (len(data) - 8, 20, 6):
            with self.subTest(cut=cut):
                self.path.write_bytes(data[:cut])
                with self.assertRaises(CheckpointError):
                    load_checkpoint(self.path)

    def test_bad_magic_version_and_missing_file(self):
        save_checkpoint(self.net, self.path)
        data = self.path.read_bytes()
        self.path.write_bytes(b"XXXX" + data[4:])
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)
        self.path.write_bytes(data[:4] + struct.pack("<I", 2) + data[8:])
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)
        with self.assertRaises(CheckpointError):
            load_checkpoint(Path(self.tmp.name) / "missing.crlu")

    def test_no_temp_files_left(self):
        save_checkpoint(self.net, self.path)
        self.assertEqual([p.name for p in Path(self.tmp.name).iterdir()], ["net.crlu"])


def run_tests():
    """Run all tests and print results"""
    loader = unittest.TestLoader()
    suite = unittest.TestSuite()
    for case in (TestActivations, TestNetworkAndForward, TestGradients, TestAdam, TestTraining,
                 TestCheckpoints):
        suite.addTests(loader.loadTestsFromTestCase(case))

    result = unittest.TextTestRunner(verbosity=2).run(suite)
    print("\n" + "=" * 70)
    print("NETWORK CORE TEST SUMMARY")
    print("=" * 70)
    print(f"Tests run: {result.testsRun}")
    print(f"Failures: {len(result.failures)}")
    print(f"Errors: {len(result.errors)}")
    print("=" * 70)
    return result.wasSuccessful()


if __name__ == "__main__":
    sys.exit(0 if run_tests() else 1)
