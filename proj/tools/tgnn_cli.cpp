// Command-line entry point: train, analyze, validate-oplog, gen, plan.
// Exit codes: 0 ok, 1 runtime error, 2 configuration error.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tgnn/config.hpp"
#include "tgnn/memory_store.hpp"
#include "tgnn/model.hpp"
#include "tgnn/oplog.hpp"
#include "tgnn/parallel.hpp"
#include "tgnn/synthetic.hpp"
#include "tgnn/temporal_graph.hpp"
#include "tgnn/trainer.hpp"

namespace {

namespace fs = std::filesystem;

double dataset_max_t(const tgnn::TemporalGraph& g) {
  return g.num_events() > 0 ? g.events.back().t : 1.0;
}

tgnn::SplitRanges split_dataset(const tgnn::TemporalGraph& g, double train_frac,
                                double val_frac) {
  if (val_frac > 0.0 && train_frac + val_frac < 1.0) {
    return tgnn::chronological_split(g, train_frac, val_frac);
  }
  const double n = static_cast<double>(g.num_events());
  tgnn::SplitRanges s;
  s.train_end = static_cast<tgnn::EventId>(std::llround(n * train_frac));
  s.val_end = std::min<tgnn::EventId>(
      g.num_events(), static_cast<tgnn::EventId>(std::llround(n * (train_frac + val_frac))));
  return s;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw tgnn::config_error("cannot write " + p.string());
  return out;
}

// Bookkeeping-only traversal: staleness and information loss depend on event
// times and the coalescing, never on the learned memory content, so the
// replay here runs with 1-wide dummy memory rows.
void write_staleness_report(const tgnn::TemporalGraph& g, tgnn::EventId train_end,
                            std::int64_t global_batch, std::ostream& out) {
  tgnn::NodeMemoryState st = tgnn::init_state(g.num_nodes, 1);
  out << "batch,begin,end,mean_staleness,info_loss,generated,kept\n";
  std::int64_t bi = 0;
  for (tgnn::EventId b = 0; b < train_end; b += global_batch, ++bi) {
    const tgnn::EventId e = std::min<tgnn::EventId>(train_end, b + global_batch);
    std::span<const tgnn::Event> events(g.events.data() + b, static_cast<std::size_t>(e - b));
    const tgnn::StalenessReport rep = tgnn::staleness_report(st, events);
    char buf[160];
    std::snprintf(buf, sizeof buf, "%lld,%lld,%lld,%.17g,%.17g,%lld,%lld",
                  static_cast<long long>(bi), static_cast<long long>(b),
                  static_cast<long long>(e), rep.mean_staleness, rep.info_loss,
                  static_cast<long long>(rep.generated), static_cast<long long>(rep.kept));
    out << buf << '\n';
    for (const tgnn::PendingMail& m : tgnn::comb(tgnn::generate_mails(st, events, b))) {
      tgnn::MailRowView mv;
      mv.mem2 = std::span<const double>(m.mem2);
      mv.t = m.t;
      mv.dt = m.dt;
      mv.event = m.event;
      tgnn::apply_root_write(st, m.node, st.memory.row(static_cast<std::size_t>(m.node)), mv);
    }
  }
}

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::string seed;
  std::vector<std::string> sets;
  bool plan_only = false;
};

int cmd_train(const TrainArgs& a) {
  tgnn::KvMap kv;
  if (!a.config.empty()) kv = tgnn::parse_config_file(a.config);
  for (const std::string& s : a.sets) tgnn::apply_override(kv, s);
  if (!a.data.empty()) kv["data"] = a.data;
  if (!a.out.empty()) kv["out"] = a.out;
  if (!a.seed.empty()) kv["seed"] = a.seed;
  tgnn::RunManifest m = tgnn::manifest_from_kv(kv);
  if (m.data.empty()) throw tgnn::config_error("train: no dataset given (data= or --data)");

  if (m.max_safe > 0 || m.saturation > 0) {
    if (m.max_safe <= 0 || m.saturation <= 0) {
      throw tgnn::config_error("planner needs both max_safe and saturation");
    }
    const tgnn::PlanResult pr =
        tgnn::plan_config(m.train.p, m.train.q, m.max_safe, m.saturation, m.copies);
    m.train.i = pr.i;
    m.train.j = pr.j;
    m.train.k = pr.k;
  }
  m.train.validate();
  if (a.plan_only) {
    std::printf("i=%d j=%d k=%d\n", m.train.i, m.train.j, m.train.k);
    return 0;
  }

  const tgnn::TemporalGraph g = tgnn::load_dataset(m.data);
  const tgnn::SplitRanges split = split_dataset(g, m.train_frac, m.val_frac);
  if (split.train_end <= 0) throw tgnn::config_error("train: empty training range");

  fs::create_directories(m.out);
  const fs::path out_dir(m.out);

  tgnn::RunOptions opt;
  opt.model = m.model_config(g.num_nodes, dataset_max_t(g), g.d_e);
  opt.train = m.train;
  opt.train_begin = 0;
  opt.train_end = split.train_end;
  opt.val_begin = split.train_end;
  opt.val_end = split.val_end;
  opt.eval_batch = m.eval_batch;
  opt.eval_negatives = m.eval_negatives;

  std::ofstream metrics = open_out(out_dir / "metrics.csv");
  opt.metrics_out = &metrics;

  std::vector<std::unique_ptr<std::ofstream>> log_files;
  if (m.oplog) {
    for (int r = 0; r < m.train.k; ++r) {
      log_files.push_back(std::make_unique<std::ofstream>(
          open_out(out_dir / ("oplog_" + std::to_string(r) + ".csv"))));
      opt.oplog_out.push_back(log_files.back().get());
    }
  }

  double best_mrr = -1.0;
  const fs::path best_path = out_dir / "best.ckpt";
  opt.on_eval = [&](const tgnn::MetricsRow& row, const tgnn::ModelParams& p) {
    if (row.val_mrr > best_mrr) {
      best_mrr = row.val_mrr;
      tgnn::save_checkpoint(p, best_path.string());
    }
  };

  if (m.schedule_dump) {
    const tgnn::Assignment asg = tgnn::build_assignment(m.train, 0, split.train_end, false);
    open_out(out_dir / "schedule.csv") << tgnn::dump_assignment(asg);
  }
  if (m.staleness) {
    std::ofstream sal = open_out(out_dir / "staleness.csv");
    write_staleness_report(g, split.train_end, m.train.global_batch_events(), sal);
  }

  const tgnn::RunResult res = tgnn::run_training(g, opt);
  tgnn::save_checkpoint(res.params, (out_dir / "model.ckpt").string());

  const double final_mrr = res.metrics.empty() ? 0.0 : res.metrics.back().val_mrr;
  std::printf("done: %lld iterations, final val MRR %.6f, %.1fs\n",
              static_cast<long long>(res.barriers), final_mrr, res.elapsed_s);
  return 0;
}

struct AnalyzeArgs {
  std::string data;
  std::string out = ".";
  std::vector<std::int64_t> batch_sizes{1, 10, 60, 600, 6000};
};

int cmd_analyze(const AnalyzeArgs& a) {
  if (a.data.empty()) throw tgnn::config_error("analyze: --data required");
  const tgnn::TemporalGraph g = tgnn::load_dataset(a.data);
  fs::create_directories(a.out);
  const fs::path out_dir(a.out);

  std::ofstream agg = open_out(out_dir / "aggregate.csv");
  agg << "batch_size,total_captured,total_mails,info_loss\n";
  for (const std::int64_t bs : a.batch_sizes) {
    const tgnn::CapturedStats stats = tgnn::captured_events_analysis(g, bs);
    char buf[128];
    std::snprintf(buf, sizeof buf, "%lld,%lld,%lld,%.17g", static_cast<long long>(bs),
                  static_cast<long long>(stats.total_captured),
                  static_cast<long long>(stats.total_mails), stats.info_loss());
    agg << buf << '\n';

    std::vector<tgnn::NodeId> order(static_cast<std::size_t>(g.num_nodes));
    for (tgnn::NodeId v = 0; v < g.num_nodes; ++v) order[static_cast<std::size_t>(v)] = v;
    std::sort(order.begin(), order.end(), [&](tgnn::NodeId x, tgnn::NodeId y) {
      const auto dx = stats.degree[static_cast<std::size_t>(x)];
      const auto dy = stats.degree[static_cast<std::size_t>(y)];
      if (dx != dy) return dx > dy;
      return x < y;
    });
    std::ofstream per = open_out(out_dir / ("captured_" + std::to_string(bs) + ".csv"));
    per << "node,degree,captured,capture_fraction\n";
    for (const tgnn::NodeId v : order) {
      const auto deg = stats.degree[static_cast<std::size_t>(v)];
      const auto cap = stats.captured[static_cast<std::size_t>(v)];
      const double frac = deg > 0 ? static_cast<double>(cap) / static_cast<double>(deg) : 0.0;
      char row[128];
      std::snprintf(row, sizeof row, "%lld,%lld,%lld,%.17g", static_cast<long long>(v),
                    static_cast<long long>(deg), static_cast<long long>(cap), frac);
      per << row << '\n';
    }
  }
  std::printf("analyzed %lld events over %zu batch sizes -> %s\n",
              static_cast<long long>(g.num_events()), a.batch_sizes.size(),
              out_dir.string().c_str());
  return 0;
}

int cmd_validate_oplog(const std::string& path, int i, int j) {
  const std::vector<tgnn::OpRecord> recs = tgnn::parse_oplog_file(path);
  const tgnn::OplogVerdict v = tgnn::validate_oplog(recs, i, j);
  if (v.ok) {
    std::printf("pass (%zu ops)\n", recs.size());
    return 0;
  }
  std::printf("fail at line %lld: %s\n", static_cast<long long>(v.line), v.message.c_str());
  return 1;
}

struct GenArgs {
  std::string out;
  tgnn::SynthParams p;
  bool unipartite = false;
};

int cmd_gen(const GenArgs& a) {
  if (a.out.empty()) throw tgnn::config_error("gen: --out required");
  tgnn::SynthParams p = a.p;
  p.bipartite = !a.unipartite;
  const tgnn::TemporalGraph g = tgnn::gen_synthetic(p);
  if (const fs::path parent = fs::path(a.out).parent_path(); !parent.empty()) {
    fs::create_directories(parent);
  }
  tgnn::write_dataset(g, a.out);
  std::printf("wrote %lld events on %lld nodes to %s\n",
              static_cast<long long>(g.num_events()), static_cast<long long>(g.num_nodes),
              a.out.c_str());
  return 0;
}

int cmd_plan(int p, int q, std::int64_t max_safe, std::int64_t saturation, int copies) {
  const tgnn::PlanResult pr = tgnn::plan_config(p, q, max_safe, saturation, copies);
  std::printf("i=%d j=%d k=%d\n", pr.i, pr.j, pr.k);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"event-stream temporal GNN trainer"};
  app.require_subcommand(1);

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "train a model and emit metrics");
  train->add_option("--config", train_args.config, "key=value config file");
  train->add_option("--data", train_args.data, "events CSV (sidecar <data>.meta)");
  train->add_option("--out", train_args.out, "output directory");
  train->add_option("--seed", train_args.seed, "RNG seed");
  train->add_option("--set", train_args.sets, "override any config key, key=value");
  train->add_flag("--plan-only", train_args.plan_only, "print the planned (i,j,k) and exit");

  AnalyzeArgs analyze_args;
  CLI::App* analyze = app.add_subcommand("analyze", "captured-events and info-loss report");
  analyze->add_option("--data", analyze_args.data, "events CSV")->required();
  analyze->add_option("--out", analyze_args.out, "output directory");
  analyze->add_option("--batch-sizes", analyze_args.batch_sizes, "batch sizes to sweep")
      ->delimiter(',');

  std::string vo_path;
  int vo_i = 1, vo_j = 1;
  CLI::App* vo = app.add_subcommand("validate-oplog", "check a daemon op-log");
  vo->add_option("--log", vo_path, "op-log path")->required();
  vo->add_option("--i", vo_i, "mini-batch parallelism of the run")->required();
  vo->add_option("--j", vo_j, "epoch parallelism of the run")->required();

  GenArgs gen_args;
  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic event stream");
  gen->add_option("--out", gen_args.out, "output CSV path")->required();
  gen->add_option("--nodes", gen_args.p.nodes, "node count");
  gen->add_option("--events", gen_args.p.events, "event count");
  gen->add_option("--burst-prob", gen_args.p.burst_prob, "burst continuation probability");
  gen->add_option("--pref-prob", gen_args.p.pref_prob, "preferred-destination probability");
  gen->add_option("--prefs-per-src", gen_args.p.prefs_per_src, "preferred destinations per source");
  gen->add_option("--src-frac", gen_args.p.src_frac, "source share of nodes");
  gen->add_option("--d-e", gen_args.p.d_e, "edge feature width");
  gen->add_option("--zipf-s", gen_args.p.zipf_s, "source popularity skew");
  gen->add_option("--seed", gen_args.p.seed, "RNG seed");
  gen->add_flag("--unipartite", gen_args.unipartite, "single node partition");

  int plan_p = 1, plan_q = 1, plan_copies = 1;
  std::int64_t plan_max_safe = 0, plan_saturation = 0;
  CLI::App* plan = app.add_subcommand("plan", "choose (i,j,k) for a machine shape");
  plan->add_option("--p", plan_p, "machine count")->required();
  plan->add_option("--q", plan_q, "trainers per machine")->required();
  plan->add_option("--max-safe", plan_max_safe, "largest accuracy-safe global batch")->required();
  plan->add_option("--saturation", plan_saturation, "per-trainer saturation batch")->required();
  plan->add_option("--copies", plan_copies, "memory copies per machine");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train) return cmd_train(train_args);
    if (*analyze) return cmd_analyze(analyze_args);
    if (*vo) return cmd_validate_oplog(vo_path, vo_i, vo_j);
    if (*gen) return cmd_gen(gen_args);
    if (*plan) return cmd_plan(plan_p, plan_q, plan_max_safe, plan_saturation, plan_copies);
  } catch (const tgnn::config_error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
