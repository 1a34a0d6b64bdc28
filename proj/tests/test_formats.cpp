#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "tgnn/config.hpp"
#include "tgnn/model.hpp"
#include "tgnn/oplog.hpp"
#include "tgnn/synthetic.hpp"
#include "tgnn/trainer.hpp"

using namespace tgnn;

namespace {

std::filesystem::path scratch_dir() {
  auto dir = std::filesystem::temp_directory_path() / "tgnn_format_tests";
  std::filesystem::create_directories(dir);
  return dir;
}

void write_file(const std::filesystem::path& p, const std::string& body) {
  std::ofstream out(p);
  out << body;
}

}  // namespace

TEST_CASE("config text parsing, overrides, and manifest checks", "[formats]") {
  std::istringstream in(
      "# run shape\n"
      "\n"
      "  i = 2\n"
      "j=2\n"
      "k = 8\n"
      "local_batch = 600\n"
      "lr_base = 1e-4\n"
      "train_frac = 0.6\n"
      "val_frac = 0.2\n"
      "oplog = true\n");
  KvMap kv = parse_config_text(in, "inline");
  REQUIRE(kv.at("i") == "2");
  REQUIRE(kv.at("lr_base") == "1e-4");

  apply_override(kv, "j=4");
  apply_override(kv, "seed = 9");
  REQUIRE(kv.at("j") == "4");

  RunManifest m = manifest_from_kv(kv);
  REQUIRE(m.train.i == 2);
  REQUIRE(m.train.j == 4);
  REQUIRE(m.train.k == 8);
  REQUIRE(m.train.seed == 9);
  REQUIRE(m.train.lr_base == Catch::Approx(1e-4));
  REQUIRE(m.train_frac == Catch::Approx(0.6));
  REQUIRE(m.oplog);
  // Untouched keys keep their defaults.
  REQUIRE(m.d_mem == 100);
  REQUIRE(m.eval_negatives == 49);

  ModelConfig mc = m.model_config(50, 10.0, 3);
  REQUIRE(mc.num_nodes == 50);
  REQUIRE(mc.d_e == 3);
  REQUIRE(mc.max_t == 10.0);

  SECTION("parse errors carry origin and line") {
    std::istringstream bad("i = 1\nnot a pair\n");
    REQUIRE_THROWS_WITH(parse_config_text(bad, "run.cfg"),
                        Catch::Matchers::ContainsSubstring("run.cfg:2"));
  }
  SECTION("unknown keys are rejected") {
    KvMap k2;
    apply_override(k2, "learning_rate=1");
    REQUIRE_THROWS_WITH(manifest_from_kv(k2),
                        Catch::Matchers::ContainsSubstring("learning_rate"));
  }
  SECTION("numeric values must parse fully") {
    KvMap k2;
    apply_override(k2, "local_batch=12x");
    REQUIRE_THROWS_AS(manifest_from_kv(k2), config_error);
    KvMap k3;
    apply_override(k3, "oplog=maybe");
    REQUIRE_THROWS_AS(manifest_from_kv(k3), config_error);
  }
  SECTION("split fractions are validated") {
    KvMap k2;
    apply_override(k2, "train_frac=0.9");
    apply_override(k2, "val_frac=0.2");
    REQUIRE_THROWS_AS(manifest_from_kv(k2), config_error);
    KvMap k3;
    apply_override(k3, "train_frac=0");
    REQUIRE_THROWS_AS(manifest_from_kv(k3), config_error);
  }
  SECTION("override tokens must be key=value") {
    KvMap k2;
    REQUIRE_THROWS_AS(apply_override(k2, "justakey"), config_error);
    REQUIRE_THROWS_AS(apply_override(k2, "=5"), config_error);
  }
}

TEST_CASE("checkpoints round-trip bitwise and refuse mismatched shapes", "[formats]") {
  ModelConfig cfg;
  cfg.d_mem = 5;
  cfg.d_time = 3;
  cfg.d_static = 2;
  cfg.d_attn = 4;
  cfg.d_e = 1;
  cfg.num_nodes = 9;
  cfg.max_t = 20.0;
  ModelParams p = init_params(cfg, 77);

  const auto path = (scratch_dir() / "model.ckpt").string();
  save_checkpoint(p, path);

  ModelParams q = init_params(cfg, 1234);  // different values, same shapes
  load_checkpoint(q, path);
  std::vector<const Tensor*> ta, tb;
  for_each_tensor(p, [&](const char*, Tensor& t) { ta.push_back(&t); });
  for_each_tensor(q, [&](const char*, Tensor& t) { tb.push_back(&t); });
  for (std::size_t i = 0; i < ta.size(); ++i)
    for (std::size_t x = 0; x < ta[i]->numel(); ++x)
      REQUIRE(ta[i]->flat()[x] == tb[i]->flat()[x]);

  ModelConfig other = cfg;
  other.d_mem = 6;
  ModelParams r = init_params(other, 1);
  REQUIRE_THROWS_WITH(load_checkpoint(r, path),
                      Catch::Matchers::ContainsSubstring("manifest mismatch"));

  const auto bad = (scratch_dir() / "bad.ckpt").string();
  write_file(bad, "not a checkpoint\n");
  REQUIRE_THROWS_WITH(load_checkpoint(q, bad), Catch::Matchers::ContainsSubstring("magic"));
  REQUIRE_THROWS_AS(load_checkpoint(q, (scratch_dir() / "missing.ckpt").string()),
                    config_error);
}

TEST_CASE("dataset loader reports precise errors", "[formats]") {
  const auto dir = scratch_dir();

  const auto ok_csv = (dir / "ok.csv").string();
  write_file(ok_csv, "src,dst,t,f0\n0,2,1.5,0.25\n1,2,2.0,-1\n");
  write_file(sidecar_path(ok_csv), "num_nodes=3\nbipartite_boundary=2\nd_e=1\n");
  TemporalGraph g = load_dataset(ok_csv);
  REQUIRE(g.num_nodes == 3);
  REQUIRE(g.num_events() == 2);
  REQUIRE(g.d_e == 1);
  REQUIRE(g.edge_feat(1)[0] == -1.0);
  REQUIRE(g.bipartite());

  REQUIRE_THROWS_AS(load_dataset((dir / "absent.csv").string()), config_error);

  const auto bad_header = (dir / "hdr.csv").string();
  write_file(bad_header, "source,dst,t\n0,1,1\n");
  write_file(sidecar_path(bad_header), "num_nodes=2\nbipartite_boundary=1\nd_e=0\n");
  REQUIRE_THROWS_WITH(load_dataset(bad_header),
                      Catch::Matchers::ContainsSubstring("line 1"));

  const auto short_row = (dir / "short.csv").string();
  write_file(short_row, "src,dst,t\n0,1,1\n0,1\n");
  write_file(sidecar_path(short_row), "num_nodes=2\nbipartite_boundary=1\nd_e=0\n");
  REQUIRE_THROWS_WITH(load_dataset(short_row),
                      Catch::Matchers::ContainsSubstring("line 3"));

  const auto oob = (dir / "oob.csv").string();
  write_file(oob, "src,dst,t\n0,5,1\n");
  write_file(sidecar_path(oob), "num_nodes=2\nbipartite_boundary=1\nd_e=0\n");
  REQUIRE_THROWS_WITH(load_dataset(oob),
                      Catch::Matchers::ContainsSubstring("out of range"));

  const auto no_meta = (dir / "lonely.csv").string();
  write_file(no_meta, "src,dst,t\n0,1,1\n");
  std::filesystem::remove(sidecar_path(no_meta));
  REQUIRE_THROWS_AS(load_dataset(no_meta), config_error);

  REQUIRE(sidecar_path("runs/data.csv") == "runs/data.meta");
  REQUIRE(sidecar_path("plain") == "plain.meta");
  REQUIRE(sidecar_path("a.b/plain") == "a.b/plain.meta");
}

TEST_CASE("metrics rows serialize deterministically", "[formats]") {
  std::ostringstream os;
  detail::write_metrics_header(&os);
  MetricsRow row;
  row.iter = 3;
  row.traversed = 1800;
  row.loss = 1.0 / 3.0;
  row.val_mrr = 0.25;
  row.elapsed_s = 1.25;
  detail::write_metrics_row(&os, row);
  REQUIRE(os.str() ==
          "iter,traversed,loss,val_mrr,elapsed_s\n"
          "3,1800,0.33333333333333331,0.25,1.250\n");

  // Null sinks are ignored.
  detail::write_metrics_header(nullptr);
  detail::write_metrics_row(nullptr, row);
}

TEST_CASE("op-log parsing reports malformed lines", "[formats]") {
  std::istringstream ok("0,0,R,0,5,10\n0,0,W,0,5,10\n");
  auto recs = parse_oplog(ok);
  REQUIRE(recs.size() == 2);
  REQUIRE(recs[0].first_idx == 5);
  REQUIRE(recs[1].kind == 'W');

  std::istringstream bad_kind("0,0,R,0,5,10\n0,0,X,0,5,10\n");
  REQUIRE_THROWS_WITH(parse_oplog(bad_kind), Catch::Matchers::ContainsSubstring("line 2"));

  std::istringstream short_line("0,0,R,0,5\n");
  REQUIRE_THROWS_WITH(parse_oplog(short_line),
                      Catch::Matchers::ContainsSubstring("expected 6 fields"));

  std::istringstream bad_int("0,zero,R,0,5,10\n");
  REQUIRE_THROWS_WITH(parse_oplog(bad_int), Catch::Matchers::ContainsSubstring("bad integer"));

  REQUIRE_THROWS_AS(parse_oplog_file("/nonexistent/op.log"), config_error);
}
