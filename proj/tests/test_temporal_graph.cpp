#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <sstream>

#include "tgnn/synthetic.hpp"
#include "tgnn/temporal_graph.hpp"

using namespace tgnn;

namespace {

TemporalGraph toy_graph() {
  TemporalGraph g;
  g.num_nodes = 5;
  g.bipartite_boundary = 3;  // sources 0..2, destinations 3..4
  g.events = {{0, 3, 1.0}, {1, 3, 2.0}, {0, 4, 3.0}, {2, 3, 3.0}, {0, 3, 5.0}};
  g.d_e = 0;
  g.edge_feats = Tensor({g.events.size(), 0});
  g.finalize();
  return g;
}

}  // namespace

TEST_CASE("finalize sorts events and indexes incidence", "[graph]") {
  TemporalGraph g;
  g.num_nodes = 4;
  g.bipartite_boundary = 2;
  g.events = {{1, 2, 5.0}, {0, 3, 1.0}, {1, 3, 3.0}};
  g.d_e = 0;
  g.edge_feats = Tensor({g.events.size(), 0});
  g.finalize();
  REQUIRE(g.events[0].t == 1.0);
  REQUIRE(g.events[2].t == 5.0);
  REQUIRE(g.incident(1).size() == 2);
  REQUIRE(g.incident(0).size() == 1);
}

TEST_CASE("recent neighbor sampling is most-recent-first and strictly past", "[graph]") {
  TemporalGraph g = toy_graph();
  // node 0 has events at t=1, 3, 5; querying at t=5 must see only t<5
  auto nbrs = sample_recent_neighbors(g, 0, 5.0, 10);
  REQUIRE(nbrs.size() == 2);
  REQUIRE(nbrs[0].dt == Catch::Approx(2.0));  // t=3 event first
  REQUIRE(nbrs[0].node == 4);
  REQUIRE(nbrs[1].dt == Catch::Approx(4.0));
  REQUIRE(nbrs[1].node == 3);

  // cap respected
  auto one = sample_recent_neighbors(g, 0, 5.0, 1);
  REQUIRE(one.size() == 1);
  REQUIRE(one[0].node == 4);

  // nothing strictly before the first event
  REQUIRE(sample_recent_neighbors(g, 0, 1.0, 10).empty());
}

TEST_CASE("negative sampling respects the destination partition", "[graph]") {
  TemporalGraph g = toy_graph();
  auto negs = sample_negatives(g, 0, 0, 200, 7);
  REQUIRE(negs.size() == 200);
  for (NodeId v : negs) {
    REQUIRE(v >= 3);
    REQUIRE(v < 5);
  }
  // same (batch, group, seed) reproduces; different group diverges
  REQUIRE(sample_negatives(g, 0, 0, 200, 7) == negs);
  REQUIRE(sample_negatives(g, 0, 1, 200, 7) != negs);
}

TEST_CASE("captured events coalesce per batch", "[graph]") {
  TemporalGraph g = toy_graph();
  // batch size 1: every appearance is captured
  auto fine = captured_events_analysis(g, 1);
  REQUIRE(fine.total_captured == 2 * g.num_events());
  REQUIRE(fine.info_loss() == 0.0);
  // batch size 5: one capture per node
  auto coarse = captured_events_analysis(g, 5);
  REQUIRE(coarse.captured[0] == 1);
  REQUIRE(coarse.degree[0] == 3);
  REQUIRE(coarse.info_loss() > 0.0);
}

TEST_CASE("synthetic generator makes a well-formed bipartite stream", "[graph]") {
  SynthParams p;
  p.nodes = 60;
  p.events = 500;
  p.seed = 3;
  TemporalGraph g = gen_synthetic(p);
  REQUIRE(g.num_events() == 500);
  REQUIRE(g.bipartite());
  double last = 0;
  for (const Event& e : g.events) {
    REQUIRE(e.src < g.bipartite_boundary);
    REQUIRE(e.dst >= g.bipartite_boundary);
    REQUIRE(e.t >= last);
    last = e.t;
  }
  // determinism
  TemporalGraph g2 = gen_synthetic(p);
  REQUIRE(g2.events.size() == g.events.size());
  REQUIRE(g2.events[123].src == g.events[123].src);
  REQUIRE(g2.events[123].t == g.events[123].t);
}

TEST_CASE("dataset round-trips through CSV and sidecar", "[graph]") {
  SynthParams p;
  p.nodes = 40;
  p.events = 120;
  p.d_e = 3;
  p.seed = 11;
  TemporalGraph g = gen_synthetic(p);
  const auto dir = std::filesystem::temp_directory_path() / "tgnn_graph_tests";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "roundtrip_events.csv").string();
  write_dataset(g, path);
  TemporalGraph h = load_dataset(path);
  REQUIRE(h.num_events() == g.num_events());
  REQUIRE(h.num_nodes == g.num_nodes);
  REQUIRE(h.bipartite_boundary == g.bipartite_boundary);
  REQUIRE(h.d_e == 3);
  for (EventId e = 0; e < g.num_events(); ++e) {
    REQUIRE(h.events[static_cast<std::size_t>(e)].src == g.events[static_cast<std::size_t>(e)].src);
    REQUIRE(h.events[static_cast<std::size_t>(e)].t ==
            Catch::Approx(g.events[static_cast<std::size_t>(e)].t));
    for (std::size_t f = 0; f < 3; ++f) {
      REQUIRE(h.edge_feat(e)[f] == Catch::Approx(g.edge_feat(e)[f]));
    }
  }
}

TEST_CASE("chronological split fractions", "[graph]") {
  SynthParams p;
  p.nodes = 30;
  p.events = 100;
  TemporalGraph g = gen_synthetic(p);
  auto s = chronological_split(g, 0.7, 0.15);
  REQUIRE(s.train_end == 70);
  REQUIRE(s.val_end == 85);
}
