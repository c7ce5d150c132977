import numpy as np
import pytest

from weft import (
    BatchNormAttrs,
    ConfigError,
    ConvAttrs,
    GemmAttrs,
    Graph,
    Node,
    OpKind,
    ReshapeAttrs,
    Tensor,
    drop_identity,
    eliminate_dead,
    fold_batch_norm,
    fuse_activation,
    run_pipeline,
    tensor_compare,
    validate,
)
from weft.graph import errors_only
from weft.runtime import RunConfig, execute, plan
from weft.simplify import DEFAULT_PIPELINE


def conv_bn_relu(gamma=1.0, beta=0.0, mean=0.0, var=1.0, eps=0.0, bias=True,
                 with_relu=True, c=2):
    nodes = [
        Node("conv", OpKind.CONV, ("x", "w") + (("b",) if bias else ()), ("cv",),
             ConvAttrs(kernel_h=3, kernel_w=3, pads=(1, 1, 1, 1))),
        Node("bn", OpKind.BATCH_NORM, ("cv", "g", "be", "mu", "va"),
             ("bnout",), BatchNormAttrs(epsilon=eps)),
    ]
    outputs = ["bnout"]
    if with_relu:
        nodes.append(Node("act", OpKind.RELU, ("bnout",), ("y",)))
        outputs = ["y"]
    inits = {
        "w": Tensor.seeded_uniform((c, 2, 3, 3), seed=1),
        "g": Tensor.full((c,), gamma),
        "be": Tensor.full((c,), beta),
        "mu": Tensor.full((c,), mean),
        "va": Tensor.full((c,), var),
    }
    if bias:
        inits["b"] = Tensor.seeded_uniform((c,), seed=2)
    return Graph(name="toy", inputs=[("x", (1, 2, 6, 6))], outputs=outputs,
                 nodes=nodes, initializers=inits)


def run_graph(g, seed=0):
    x = Tensor.seeded_uniform((1, 2, 6, 6), seed=seed)
    out = execute(plan(g, cfg=RunConfig()), {"x": x})
    return out[g.outputs[0]]


class TestFoldBatchNorm:
    def test_identity_params_bit_unchanged(self):
        g = conv_bn_relu(gamma=1.0, beta=0.0, mean=0.0, var=1.0, eps=0.0)
        out, report = fold_batch_norm(g)
        assert [n.kind for n in out.nodes] == [OpKind.CONV, OpKind.RELU]
        assert report.nodes_after == report.nodes_before - 1
        conv = out.nodes[0]
        assert out.initializers[conv.inputs[1]].tobytes() == \
            g.initializers["w"].tobytes()
        assert out.initializers[conv.inputs[2]].tobytes() == \
            g.initializers["b"].tobytes()

    def test_hand_evaluated_folding(self):
        # s = gamma/sqrt(var+eps) = 2/sqrt(0.25) = 4; b' = (0-0.5)*4 + 1 = -1
        g = conv_bn_relu(gamma=2.0, beta=1.0, mean=0.5, var=0.25, eps=0.0, bias=False)
        out, _ = fold_batch_norm(g)
        conv = out.nodes[0]
        w_folded = out.initializers[conv.inputs[1]]
        b_folded = out.initializers[conv.inputs[2]]
        np.testing.assert_array_equal(w_folded.data, g.initializers["w"].data * 4.0)
        np.testing.assert_array_equal(b_folded.data, np.full(2, -1.0, dtype=np.float32))

    def test_rewires_to_bn_output_name(self):
        g = conv_bn_relu()
        out, _ = fold_batch_norm(g)
        assert out.nodes[0].outputs == ("bnout",)
        assert errors_only(validate(out)) == []

    def test_semantics_preserved(self):
        g = conv_bn_relu(gamma=1.3, beta=-0.2, mean=0.4, var=0.8, eps=1e-5)
        out, _ = fold_batch_norm(g)
        for seed in range(5):
            rep = tensor_compare(run_graph(g, seed), run_graph(out, seed))
            assert rep.max_abs_diff <= 1e-4

    def test_fanout_guard_graph_output(self):
        g = conv_bn_relu(with_relu=False)
        g.outputs = ["cv", "bnout"]  # conv result is also exported
        out, report = fold_batch_norm(g)
        assert report.rewrites == []
        assert [n.name for n in out.nodes] == ["conv", "bn"]

    def test_fanout_guard_second_consumer(self):
        g = conv_bn_relu(with_relu=False)
        g.nodes.append(Node("r2", OpKind.RELU, ("cv",), ("other",)))
        g.outputs = ["bnout", "other"]
        _, report = fold_batch_norm(g)
        assert report.rewrites == []

    def test_bn_without_conv_untouched(self):
        g = conv_bn_relu()
        # break the pattern: BN now consumes the graph input directly
        g.nodes[1] = Node("bn", OpKind.BATCH_NORM, ("x", "g", "be", "mu", "va"),
                          ("bnout",), BatchNormAttrs(epsilon=0.0))
        g.nodes[0] = Node("conv", OpKind.CONV, ("x", "w", "b"), ("cv",),
                          ConvAttrs(kernel_h=3, kernel_w=3, pads=(1, 1, 1, 1)))
        g.outputs = ["y"]
        g.initializers["g"] = Tensor.full((2,), 1.0)
        _, report = fold_batch_norm(g)
        assert report.rewrites == []


class TestFuseActivation:
    def test_conv_relu_fuses(self):
        g = conv_bn_relu()
        folded, _ = fold_batch_norm(g)
        fused, report = fuse_activation(folded)
        assert [n.kind for n in fused.nodes] == [OpKind.CONV]
        assert fused.nodes[0].attrs.fused_relu
        assert fused.nodes[0].outputs == ("y",)
        assert report.rewrites == [("fuse_activation", ("conv", "act"))]

    def test_fanout_blocks_fusion(self):
        g = Graph(
            name="fan", inputs=[("x", (1, 1, 4, 4))], outputs=["y", "z"],
            nodes=[
                Node("conv", OpKind.CONV, ("x", "w"), ("cv",),
                     ConvAttrs(kernel_h=1, kernel_w=1)),
                Node("act", OpKind.RELU, ("cv",), ("y",)),
                Node("plus", OpKind.ADD, ("cv", "cv"), ("z",)),
            ],
            initializers={"w": Tensor.full((1, 1, 1, 1), 1.0)})
        _, report = fuse_activation(g)
        assert report.rewrites == []

    def test_relu_relu_untouched(self):
        g = Graph(
            name="rr", inputs=[("x", (1, 4))], outputs=["y"],
            nodes=[
                Node("r1", OpKind.RELU, ("x",), ("a",)),
                Node("r2", OpKind.RELU, ("a",), ("y",)),
            ])
        out, report = fuse_activation(g)
        assert report.rewrites == [] and len(out.nodes) == 2

    def test_gemm_relu_fuses(self):
        g = Graph(
            name="fc", inputs=[("x", (1, 4))], outputs=["y"],
            nodes=[
                Node("fc", OpKind.GEMM, ("x", "w"), ("a",), GemmAttrs()),
                Node("act", OpKind.RELU, ("a",), ("y",)),
            ],
            initializers={"w": Tensor.seeded_uniform((4, 3), seed=3)})
        out, _ = fuse_activation(g)
        assert len(out.nodes) == 1 and out.nodes[0].attrs.fused_relu


class TestEliminateDead:
    def test_dead_node_removed(self, relu_graph):
        relu_graph.nodes.append(Node("dead", OpKind.RELU, ("x",), ("unused",)))
        out, report = eliminate_dead(relu_graph)
        assert [n.name for n in out.nodes] == ["r"]
        assert ("dead_node", ("dead",)) in report.rewrites

    def test_live_graph_unchanged(self, relu_graph):
        out, report = eliminate_dead(relu_graph)
        assert report.rewrites == [] and out is relu_graph

    def test_orphaned_bn_params_removed(self):
        g = conv_bn_relu()
        folded, _ = fold_batch_norm(g)
        cleaned, report = eliminate_dead(folded)
        gone = {names[0] for rule, names in report.rewrites
                if rule == "dead_initializer"}
        assert {"g", "be", "mu", "va", "w", "b"} <= gone
        assert errors_only(validate(cleaned)) == []
        assert validate(cleaned) == []  # no unused-initializer warnings left


class TestDropIdentity:
    def test_identity_removed(self):
        g = Graph(
            name="id", inputs=[("x", (1, 4))], outputs=["y"],
            nodes=[
                Node("i", OpKind.IDENTITY, ("x",), ("a",)),
                Node("r", OpKind.RELU, ("a",), ("y",)),
            ])
        out, report = drop_identity(g)
        assert [n.name for n in out.nodes] == ["r"]
        assert out.nodes[0].inputs == ("x",)
        assert report.rewrites == [("identity", ("i",))]

    def test_identity_at_output_renames_producer(self):
        g = Graph(
            name="id", inputs=[("x", (1, 4))], outputs=["y"],
            nodes=[
                Node("r", OpKind.RELU, ("x",), ("a",)),
                Node("i", OpKind.IDENTITY, ("a",), ("y",)),
            ])
        out, _ = drop_identity(g)
        assert [n.name for n in out.nodes] == ["r"]
        assert out.nodes[0].outputs == ("y",)  # output name preserved

    def test_identity_bridging_input_to_output_is_kept(self):
        g = Graph(name="passthrough", inputs=[("x", (1, 4))], outputs=["y"],
                  nodes=[Node("i", OpKind.IDENTITY, ("x",), ("y",))])
        out, report = drop_identity(g)
        assert len(out.nodes) == 1 and report.rewrites == []

    def test_shape_noop_reshape_removed(self):
        g = Graph(
            name="rs", inputs=[("x", (2, 3))], outputs=["y"],
            nodes=[
                Node("rs", OpKind.RESHAPE, ("x",), ("a",), ReshapeAttrs((2, 3))),
                Node("r", OpKind.RELU, ("a",), ("y",)),
            ])
        out, report = drop_identity(g)
        assert [n.name for n in out.nodes] == ["r"]
        assert ("shape_noop", ("rs",)) in report.rewrites

    def test_flatten_into_reshape_removed(self):
        g = Graph(
            name="fr", inputs=[("x", (1, 2, 3, 4))], outputs=["y"],
            nodes=[
                Node("f", OpKind.FLATTEN, ("x",), ("a",)),
                Node("rs", OpKind.RESHAPE, ("a",), ("y",), ReshapeAttrs((2, 12))),
            ])
        out, report = drop_identity(g)
        assert [n.name for n in out.nodes] == ["rs"]
        assert out.nodes[0].inputs == ("x",)
        assert ("flatten_into_reshape", ("f",)) in report.rewrites

    def test_real_flatten_kept(self):
        g = Graph(
            name="fl", inputs=[("x", (1, 2, 3, 4))], outputs=["y"],
            nodes=[Node("f", OpKind.FLATTEN, ("x",), ("y",))])
        _, report = drop_identity(g)
        assert report.rewrites == []


class TestPipeline:
    def test_empty_pipeline_is_identity(self):
        g = conv_bn_relu()
        out, reports = run_pipeline(g, [])
        assert out is g and reports == []

    def test_default_pipeline_on_toy_chain(self):
        g = conv_bn_relu()
        out, reports = run_pipeline(g)
        assert [n.kind for n in out.nodes] == [OpKind.CONV]
        assert out.nodes[0].attrs.fused_relu
        assert validate(out) == []
        assert [r.pass_name for r in reports] == list(DEFAULT_PIPELINE)

    def test_idempotent(self):
        g = conv_bn_relu()
        once, _ = run_pipeline(g)
        twice, reports = run_pipeline(once)
        assert all(r.rewrites == [] for r in reports)
        assert [n.name for n in twice.nodes] == [n.name for n in once.nodes]

    def test_node_count_non_increasing(self):
        g = conv_bn_relu()
        out = g
        for name in DEFAULT_PIPELINE:
            from weft.simplify import PASSES
            nxt, report = PASSES[name](out)
            assert report.nodes_after <= report.nodes_before
            out = nxt

    def test_semantics_preserved_through_default_pipeline(self):
        g = conv_bn_relu(gamma=1.7, beta=0.3, mean=-0.2, var=0.6, eps=1e-5)
        out, _ = run_pipeline(g)
        for seed in range(10):
            rep = tensor_compare(run_graph(g, seed), run_graph(out, seed))
            assert rep.max_abs_diff <= 1e-4

    def test_duplicate_pass_rejected(self):
        with pytest.raises(ConfigError):
            run_pipeline(conv_bn_relu(), ["eliminate_dead", "eliminate_dead"])

    def test_unknown_pass_rejected(self):
        with pytest.raises(ConfigError, match="winograd"):
            run_pipeline(conv_bn_relu(), ["winograd"])
