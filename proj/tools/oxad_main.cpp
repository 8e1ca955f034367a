// oxad: headless driver for the streaming detector.
//
//   oxad run   (--input FILE | --synthetic SPEC) [--config CFG] --out DIR
//   oxad gen   (--spec SPEC | --preset benchmark) --out DIR
//   oxad eval  --log session.jsonl --truth truth.jsonl
//   oxad serve [--config CFG] [--port N] [--out DIR]

#include <CLI11.hpp>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "oxad/engine.hpp"
#include "oxad/engine_loop.hpp"
#include "oxad/eval.hpp"
#include "oxad/ingest.hpp"
#include "oxad/json_io.hpp"
#include "oxad/service.hpp"

namespace fs = std::filesystem;
using namespace oxad;

namespace {

EngineConfig load_config(const std::string& path) {
  return path.empty() ? default_engine_config() : engine_config_from_file(path);
}

json read_config_section(const std::string& path, const char* section) {
  if (path.empty()) return json::object();
  const json j = read_json_file(path);
  return j.contains(section) ? j.at(section) : json::object();
}

SyntheticSpec load_synthetic(const std::string& path) { return read_json_file(path).get<SyntheticSpec>(); }

struct RunOptions {
  std::string input;
  std::string synthetic;
  std::string config;
  std::string out;
  std::string timestamp_column = "timestamp";
  std::size_t snapshot_every = 1000;
  bool impute_last = false;
};

void write_pdp_dump(const fs::path& dir, const Engine& engine) {
  json dump{{"instance_id", engine.last_id().value_or(0)}, {"processed", engine.processed()}};
  json features = json::array();
  for (std::size_t j = 0; j < engine.pdp_states().size(); ++j) {
    features.push_back(engine.pdp_states()[j].snapshot(engine.config().feature_names[j]));
  }
  dump["features"] = std::move(features);
  char name[64];
  std::snprintf(name, sizeof(name), "pdp_%012llu.json", static_cast<unsigned long long>(engine.processed()));
  std::ofstream(dir / name, std::ios::binary) << dump.dump() << '\n';
}

int cmd_run(const RunOptions& opt) {
  if (opt.input.empty() == opt.synthetic.empty()) {
    throw InputError("exactly one of --input or --synthetic is required");
  }
  EngineConfig config = load_config(opt.config);
  const fs::path out(opt.out);
  fs::create_directories(out / "pdp");

  std::unique_ptr<InstanceSource> source;
  std::vector<PointId> regime_starts;
  if (!opt.synthetic.empty()) {
    const SyntheticSpec spec = load_synthetic(opt.synthetic);
    if (spec.dim() != config.dim()) {
      // The spec carries its own feature names; adopt them when the config
      // did not name features explicitly.
      if (!opt.config.empty()) throw InputError("synthetic spec and config disagree on the number of features");
      config.feature_names = spec.feature_names;
    }
    SyntheticData data = gen_synthetic(spec);
    write_truth(out / "truth.jsonl", data.truth);
    regime_starts = data.regime_starts;
    source = std::make_unique<VectorSource>(std::move(data.instances));
  } else {
    SourceSpec spec;
    spec.kind = kind_for_path(opt.input);
    spec.path = opt.input;
    spec.timestamp_column = opt.timestamp_column;
    spec.feature_columns = config.feature_names;
    spec.impute_last = opt.impute_last;
    source = open_source(spec);
  }

  Engine engine(config);
  FileSink sink(out);
  engine.set_sink(&sink);

  std::ofstream series(out / "series.csv", std::ios::binary);
  series << "instance_id,timestamp,score,mean_depth,flagged,threshold_used,warmup";
  for (const auto& n : config.feature_names) series << ",fi:" << n;
  series << '\n';

  std::size_t next_regime = 0;
  while (auto inst = source->next()) {
    // Run boundaries of synthetic streams become marks before their first instance.
    while (next_regime < regime_starts.size() && regime_starts[next_regime] <= inst->id) {
      if (regime_starts[next_regime] > 1) engine.mark_run_boundary("regime " + std::to_string(next_regime));
      ++next_regime;
    }
    const ScoredRecord r = engine.process(*inst);
    series << r.instance_id << ',' << r.timestamp << ',' << format_double(r.score) << ','
           << format_double(r.mean_depth) << ',' << (r.flagged ? 1 : 0) << ','
           << format_double(r.threshold_used) << ',' << (r.warmup ? 1 : 0);
    for (const double v : r.fi) series << ',' << format_double(v);
    series << '\n';
    if (opt.snapshot_every > 0 && engine.processed() % opt.snapshot_every == 0) {
      write_pdp_dump(out / "pdp", engine);
    }
  }
  sink.flush();
  write_json_file(out / "events.json", json(engine.events()));
  write_json_file(out / "forest_stats.json",
                  json{{"memory_bytes", engine.forest().stats().memory_bytes},
                       {"processed", engine.processed()},
                       {"live_points", engine.forest().live_points()}});
  std::cout << "processed " << engine.processed() << " instances, " << engine.events().size()
            << " events -> " << out.string() << '\n';
  return 0;
}

int cmd_gen(const std::string& spec_path, const std::string& preset, std::uint64_t seed,
            const std::string& format, const std::string& out_dir) {
  SyntheticSpec spec;
  if (!spec_path.empty()) {
    spec = load_synthetic(spec_path);
  } else if (preset == "benchmark") {
    spec = benchmark_spec(seed);
  } else {
    throw InputError("either --spec or --preset benchmark is required");
  }
  const SyntheticData data = gen_synthetic(spec);
  const fs::path out(out_dir);
  fs::create_directories(out);
  if (format == "csv" || format == "both") write_csv(out / "data.csv", data.feature_names, data.instances);
  if (format == "jsonl" || format == "both") write_jsonl(out / "data.jsonl", data.feature_names, data.instances);
  write_truth(out / "truth.jsonl", data.truth);
  write_json_file(out / "spec.json", json(spec));
  std::cout << "generated " << data.instances.size() << " instances -> " << out.string() << '\n';
  return 0;
}

json metrics_json(const ThresholdMetrics& m) {
  return json{{"threshold", m.threshold}, {"tp", m.tp},         {"fp", m.fp},  {"fn", m.fn},
              {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}};
}

int cmd_eval(const std::string& log, const std::string& truth, bool include_warmup, const std::string& out) {
  const EvalReport r = evaluate(read_session_log(log), read_truth(truth), include_warmup);
  json events = json::array();
  for (const auto& e : r.events) {
    json item{{"from", e.from}, {"to", e.to}};
    item["first_flag"] = e.first_flag ? json(*e.first_flag) : json(nullptr);
    item["latency"] = e.latency ? json(*e.latency) : json(nullptr);
    events.push_back(std::move(item));
  }
  json per_threshold = json::array();
  for (const auto& m : r.per_threshold) per_threshold.push_back(metrics_json(m));
  json flagged = metrics_json(r.flagged);
  flagged.erase("threshold");
  json report{{"evaluated", r.evaluated},
              {"positives", r.positives},
              {"negatives", r.negatives},
              {"roc_auc", r.auc},
              {"flagged", flagged},
              {"per_threshold", per_threshold},
              {"events", events},
              {"detected_events", r.detected_events},
              {"mean_latency", r.mean_latency ? json(*r.mean_latency) : json(nullptr)}};
  if (!out.empty()) write_json_file(out, report);
  std::cout << report.dump(2) << '\n';
  return 0;
}

int cmd_serve(const std::string& config_path, int port_flag, const std::string& host_flag,
              const std::string& out) {
  const EngineConfig config = load_config(config_path);
  const json section = read_config_section(config_path, "service");
  ServiceConfig svc;
  svc.host = section.value("host", svc.host);
  svc.port = section.value("port", svc.port);
  svc.subscriber_buffer = section.value("subscriber_buffer", svc.subscriber_buffer);
  if (port_flag >= 0) svc.port = port_flag;
  if (!host_flag.empty()) svc.host = host_flag;

  // Signals are taken synchronously by a dedicated thread.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  EngineLoop::Options options;
  if (!out.empty()) options.output_dir = fs::path(out);
  options.subscriber_buffer = svc.subscriber_buffer;
  EngineLoop loop(config, options);
  Service service(loop);
  // Port 0 asks the kernel for a free port; the chosen one is printed below.
  const int port = svc.port == 0 ? service.bind_any(svc.host) : service.bind(svc.host, svc.port) ? svc.port : -1;
  if (port < 0) {
    throw InputError("cannot bind " + svc.host + ":" + std::to_string(svc.port) + " (port in use?)");
  }
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    service.stop();
  });
  std::cout << "serving on " << svc.host << ":" << port << std::endl;
  service.listen();
  loop.stop();
  // listen() can also return without a signal (server error); wake the waiter.
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  std::cout << "stopped after " << loop.status().processed << " instances" << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Explainable online anomaly detection for sensor streams"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(version()));
  app.failure_message([](const CLI::App*, const CLI::Error& e) { return "oxad: error: " + std::string(e.what()) + "\n"; });

  RunOptions run_opt;
  auto* run = app.add_subcommand("run", "Score a replayed or synthetic stream and write session artifacts");
  run->add_option("--input", run_opt.input, "CSV or JSONL stream file")->check(CLI::ExistingFile);
  run->add_option("--synthetic", run_opt.synthetic, "Synthetic stream spec (JSON)")->check(CLI::ExistingFile);
  run->add_option("--config", run_opt.config, "Engine config (JSON)")->check(CLI::ExistingFile);
  run->add_option("--out", run_opt.out, "Output directory")->required();
  run->add_option("--snapshot-every", run_opt.snapshot_every, "PDP dump cadence in instances (0 = never)");
  run->add_option("--timestamp-column", run_opt.timestamp_column, "Timestamp column name ('' = synthesize)");
  run->add_flag("--impute-last", run_opt.impute_last, "Replace NaN cells with the previous value");

  std::string gen_spec, gen_preset, gen_out, gen_format = "csv";
  std::uint64_t gen_seed = 0;
  auto* gen = app.add_subcommand("gen", "Generate a synthetic stream with ground truth");
  gen->add_option("--spec", gen_spec, "Synthetic stream spec (JSON)")->check(CLI::ExistingFile);
  gen->add_option("--preset", gen_preset, "Built-in spec")->check(CLI::IsMember({"benchmark"}));
  gen->add_option("--seed", gen_seed, "Seed for --preset");
  gen->add_option("--format", gen_format, "csv, jsonl or both")->check(CLI::IsMember({"csv", "jsonl", "both"}));
  gen->add_option("--out", gen_out, "Output directory")->required();

  std::string eval_log, eval_truth, eval_out;
  bool include_warmup = false;
  auto* ev = app.add_subcommand("eval", "Score a session log against ground truth");
  ev->add_option("--log", eval_log, "session.jsonl")->required()->check(CLI::ExistingFile);
  ev->add_option("--truth", eval_truth, "truth.jsonl")->required()->check(CLI::ExistingFile);
  ev->add_option("--out", eval_out, "Also write the report here");
  ev->add_flag("--include-warmup", include_warmup, "Count warmup records");

  std::string serve_config, serve_host, serve_out;
  int serve_port = -1;
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  serve->add_option("--config", serve_config, "Config file ({engine, service})")->check(CLI::ExistingFile);
  serve->add_option("--port", serve_port, "Listen port, 0 for any free port (overrides config)");
  serve->add_option("--host", serve_host, "Listen address (overrides config)");
  serve->add_option("--out", serve_out, "Directory for session, label and mark logs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*run) return cmd_run(run_opt);
    if (*gen) return cmd_gen(gen_spec, gen_preset, gen_seed, gen_format, gen_out);
    if (*ev) return cmd_eval(eval_log, eval_truth, include_warmup, eval_out);
    if (*serve) return cmd_serve(serve_config, serve_port, serve_host, serve_out);
  } catch (const std::exception& e) {
    std::cerr << "oxad: error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
