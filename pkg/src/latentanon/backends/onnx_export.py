"""Write a (small) SyntheticWorld as an ONNX backend directory.

Used to exercise :class:`~latentanon.backends.external.OnnxBackend` end to
end and as a template for the expected graph signatures. The generator is
exported as a dense matrix, so keep the world small.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

OPSET = 17


def _save(model_graph, path):
    import onnx
    from onnx import helper

    model = helper.make_model(model_graph, opset_imports=[helper.make_opsetid("", OPSET)])
    model.ir_version = 8
    onnx.checker.check_model(model)
    onnx.save(model, str(path))


def export_world(world, directory, identity_grad: bool = False) -> Path:
    """Export ``world`` (a SyntheticWorld) into ``directory``; returns the directory."""
    from onnx import TensorProto, helper, numpy_helper

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    sh = world.shape
    L, C = sh.latent_shape
    H, W, K = sh.image_shape
    n_lat, n_pix = L * C, H * W * K
    F = TensorProto.FLOAT

    G = world.generator_matrix().astype(np.float32)  # (n_pix, n_lat)
    E = np.linalg.pinv(world.generator_matrix()).astype(np.float32)  # (n_lat, n_pix)

    def const(name, arr, dtype=np.float32):
        return numpy_helper.from_array(np.asarray(arr, dtype=dtype), name)

    def shape_init(name, dims):
        return const(name, np.array(dims, dtype=np.int64), np.int64)

    lat_in = helper.make_tensor_value_info("latent", F, ["B", L, C])
    img_in = helper.make_tensor_value_info("image", F, ["B", H, W, K])

    # generator
    nodes = [
        helper.make_node("Reshape", ["latent", "flat_lat"], ["x"]),
        helper.make_node("MatMul", ["x", "GT"], ["y"]),
        helper.make_node("Reshape", ["y", "img_shape"], ["image"]),
    ]
    g = helper.make_graph(nodes, "generator", [lat_in],
                          [helper.make_tensor_value_info("image", F, ["B", H, W, K])],
                          [const("GT", G.T), shape_init("flat_lat", [-1, n_lat]),
                           shape_init("img_shape", [-1, H, W, K])])
    _save(g, d / "generator.onnx")

    enc_nodes = [
        helper.make_node("Reshape", ["image", "flat_img"], ["p"]),
        helper.make_node("MatMul", ["p", "ET"], ["flat"]),
    ]
    enc_init = [const("ET", E.T), shape_init("flat_img", [-1, n_pix])]

    g = helper.make_graph(enc_nodes + [helper.make_node("Reshape", ["flat", "lat_shape"], ["latent"])],
                          "encoder", [img_in], [helper.make_tensor_value_info("latent", F, ["B", L, C])],
                          enc_init + [shape_init("lat_shape", [-1, L, C])])
    _save(g, d / "encoder.onnx")

    z_in = helper.make_tensor_value_info("z", F, ["B", n_lat])
    g = helper.make_graph(
        [helper.make_node("Mul", ["z", "scale"], ["sz"]),
         helper.make_node("Add", ["sz", "mean"], ["w"]),
         helper.make_node("Reshape", ["w", "lat_shape"], ["latent"])],
        "mapper", [z_in], [helper.make_tensor_value_info("latent", F, ["B", L, C])],
        [const("scale", world.mapper_scale.ravel()), const("mean", world.mapper_mean.ravel()),
         shape_init("lat_shape", [-1, L, C])],
    )
    _save(g, d / "mapper.onnx")

    g = helper.make_graph(
        enc_nodes + [helper.make_node("Gather", ["flat", "id_idx"], ["embedding"], axis=1)],
        "identity", [img_in], [helper.make_tensor_value_info("embedding", F, ["B", len(world.identity_index)])],
        enc_init + [const("id_idx", world.identity_index, np.int64)],
    )
    _save(g, d / "identity.onnx")

    A = np.zeros((n_lat, sh.n_attributes))
    for j, (idx, w) in enumerate(zip(world.attribute_index, world.attribute_weights)):
        A[idx, j] = w
    g = helper.make_graph(
        enc_nodes + [helper.make_node("MatMul", ["flat", "A"], ["pre0"]),
                     helper.make_node("Add", ["pre0", "bias"], ["pre"]),
                     helper.make_node("Sigmoid", ["pre"], ["attributes"])],
        "attributes", [img_in], [helper.make_tensor_value_info("attributes", F, ["B", sh.n_attributes])],
        enc_init + [const("A", A), const("bias", world.attribute_bias)],
    )
    _save(g, d / "attributes.onnx")

    # parser: fixed layout broadcast over the batch, emitted as float labels
    g = helper.make_graph(
        [helper.make_node("Shape", ["image"], ["s"]),
         helper.make_node("Slice", ["s", "zero", "one"], ["b"]),
         helper.make_node("Concat", ["b", "hw"], ["out_shape"], axis=0),
         helper.make_node("Expand", ["layout", "out_shape"], ["labels"])],
        "parser", [img_in], [helper.make_tensor_value_info("labels", F, ["B", H, W])],
        [const("layout", world.layout[None].astype(np.float32)), shape_init("zero", [0]),
         shape_init("one", [1]), shape_init("hw", [H, W])],
    )
    _save(g, d / "parser.onnx")

    meta = {
        "n_layers": L,
        "n_channels": C,
        "image_shape": [H, W, K],
        "embedding_dim": int(len(world.identity_index)),
        "n_attributes": int(sh.n_attributes),
        "z_dim": n_lat,
        "image_layout": "NHWC",
        "normalize_embedding": bool(world.embedding_normalized),
    }
    (d / "backend.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return d
