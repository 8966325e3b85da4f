"""Quick end-to-end check of the Python bindings on the bundled toy data."""

import pathlib
import tempfile

import numpy as np

import gane

TOY = pathlib.Path(__file__).resolve().parents[2] / "core" / "data" / "toy"


def main():
    net = gane.TextualNetwork.load(
        str(TOY / "graph.txt"), str(TOY / "data.txt"), str(TOY / "group.txt")
    )
    assert net.num_nodes == 5, net
    assert len(net.labels) == 5

    plan = gane.solve_ot(np.array([[0.0, 1.0], [1.0, 0.0]]), outer_iters=200)
    assert np.allclose(plan.sum(axis=1), 0.5, atol=1e-6)
    assert plan[0, 0] > plan[0, 1]
    assert np.allclose(gane.exact_ot(np.array([[0.7]])), [[1.0]])

    train_edges, test_edges = net.split(0.7, 1)
    model = gane.train(
        net.with_edges(train_edges), mode="gane-ap", dim=4, word_dim=4, epochs=3, ngram=3
    )
    assert len(model.loss_trace) == 3
    zu, zv = model.contextual_embedding(net, 0, 1)
    assert zu.shape == (4,) and zv.shape == (4,)
    emb = model.static_embeddings(net)
    assert emb.shape == (5, 4)
    auc = model.link_auc(net, test_edges, 7)
    assert 0.0 <= auc <= 1.0

    att = model.attention(net, 0, 1)
    assert att["plan"].shape == (len(att["tokens_u"]), len(att["tokens_v"]))
    assert att["parsed_weights"] is not None

    with tempfile.TemporaryDirectory() as d:
        path = pathlib.Path(d) / "model.ckpt"
        model.save(str(path))
        again = gane.Model.load(str(path))
        assert np.array_equal(again.static_embeddings(net), emb)

    assert abs(gane.macro_f1([0, 1, 1, 1], [0, 0, 1, 1]) - 11 / 15) < 1e-12
    assert gane.auc([(2.0, 1.0), (1.0, 3.0)]) == 0.5
    try:
        gane.train(net, mode="gane-ap", ngram=4)
    except ValueError as e:
        assert "odd" in str(e)
    else:
        raise AssertionError("even filter width accepted")
    print("smoke test passed:", model)


if __name__ == "__main__":
    main()
