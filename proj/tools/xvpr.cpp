#include "xvpr/checkpoint.hpp"
#include "xvpr/config.hpp"
#include "xvpr/evaluation.hpp"
#include "xvpr/event_frame.hpp"
#include "xvpr/event_io.hpp"
#include "xvpr/model.hpp"
#include "xvpr/parallel.hpp"
#include "xvpr/retrieval.hpp"
#include "xvpr/training.hpp"
#include "xvpr/validation.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace xvpr;

namespace {

struct GlobalArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;

  RunConfig resolve() const {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    if (seed) cfg.set_seed(*seed);
    if (threads) cfg.threads = *threads;
    cfg.validate();
    return cfg;
  }
};

std::string window_id(const std::string& stem, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "_w%04zu", index);
  return stem + buf;
}

int cmd_convert(const RunConfig& cfg, const std::string& events_path,
                const std::string& geotags_path, const std::string& out_dir) {
  const EventStream stream = parse_events(events_path);
  const std::vector<GeoTag> track = parse_geotags(geotags_path);
  const std::vector<EventWindow> windows = slice_windows(stream, cfg.delta_t_us);
  fs::create_directories(out_dir);

  const std::string stem = fs::path(events_path).stem().string();
  std::vector<EventFrame> frames(windows.size());
  parallel_for_indexed(windows.size(), cfg.threads, [&](std::size_t i) {
    frames[i] = window_to_frame(windows[i], cfg.frame, window_id(stem, i));
  });

  Manifest manifest;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const std::string base = (fs::path(out_dir) / frames[i].source_id).string();
    save_frame_raw(base + ".xvfr", frames[i]);
    save_frame_pgm(base + ".pgm", frames[i]);
    const std::int64_t mid = windows[i].t_start + (windows[i].t_end - windows[i].t_start) / 2;
    manifest.push_back({frames[i].source_id, Modality::kEvent, base + ".xvfr",
                        interpolate_geotag(track, mid), Split::kNone});
  }
  save_manifest((fs::path(out_dir) / "manifest.csv").string(), manifest);
  if (windows.empty())
    std::cerr << "warning: no complete window in " << events_path << ", nothing converted\n";
  std::cout << "converted " << windows.size() << " windows from " << events_path << "\n";
  return 0;
}

int cmd_split(const RunConfig& cfg, const std::string& manifest_path, const std::string& out_path) {
  const Manifest records = load_manifest(manifest_path);
  const Manifest tagged = make_splits(records, cfg.fractions, cfg.radius_m);
  save_manifest(out_path.empty() ? manifest_path : out_path, tagged);
  std::size_t n_train = 0, n_val = 0, n_test = 0;
  for (const SampleRecord& r : tagged) {
    if (r.split == Split::kTrain) ++n_train;
    else if (r.split == Split::kVal) ++n_val;
    else ++n_test;
  }
  std::cout << "split " << tagged.size() << " records: train " << n_train << ", val " << n_val
            << ", test " << n_test << " (dropped " << records.size() - tagged.size() << ")\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& manifest_path,
              const std::string& checkpoint_path, const std::string& loss_log_path) {
  const Manifest manifest = load_manifest(manifest_path);
  PipelineModel model = PipelineModel::init(cfg.encoder);
  const std::string log_path =
      loss_log_path.empty() ? (fs::path(checkpoint_path).parent_path() / "loss_log.csv").string()
                            : loss_log_path;
  const TrainResult result = train(model, manifest, cfg.train, checkpoint_path, log_path, &std::cerr);
  std::cout << "trained " << result.log.size() << " epochs, best val recall@1 "
            << result.best_val_recall1 << " at epoch " << result.best_epoch << "\n"
            << "checkpoint: " << checkpoint_path << "\n";
  return 0;
}

int cmd_build_db(const RunConfig& cfg, const std::string& manifest_path,
                 const std::string& checkpoint_path, const std::string& out_path, bool append) {
  const Manifest manifest = load_manifest(manifest_path);
  PipelineModel model = PipelineModel::load(checkpoint_path);
  const Digest fp = sha256_file(checkpoint_path);
  const std::vector<const SampleRecord*> images = filter(manifest, Modality::kImage);
  PlaceDatabase db = build_db(model, images, fp, cfg.threads);
  if (append && fs::exists(out_path)) {
    PlaceDatabase existing = load_db(out_path);
    if (existing.fingerprint != fp)
      throw DataError("build-db: cannot append, existing database was built from a different "
                      "checkpoint");
    for (DbEntry& e : db.entries) existing.entries.push_back(std::move(e));
    db = std::move(existing);
  }
  save_db(out_path, db);
  std::cout << "database with " << db.entries.size() << " entries -> " << out_path << "\n";
  return 0;
}

int cmd_query(const RunConfig& cfg, const std::string& db_path, const std::string& checkpoint_path,
              const std::string& frame_path, int top_n) {
  PipelineModel model = PipelineModel::load(checkpoint_path);
  const PlaceDatabase db = load_db(db_path);
  const Digest fp = sha256_file(checkpoint_path);
  const EventFrame frame = load_frame_raw(frame_path);
  const QueryResult result = query(model, db, frame, top_n > 0 ? top_n : cfg.top_n, fp,
                                   fs::path(frame_path).stem().string());
  std::cout << query_result_csv(result);
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& db_path, const std::string& checkpoint_path,
             const std::string& manifest_path, const std::string& mode_str,
             const std::string& modality_str, const std::string& out_csv) {
  PipelineModel model = PipelineModel::load(checkpoint_path);
  const PlaceDatabase db = load_db(db_path);
  const Digest fp = sha256_file(checkpoint_path);
  const Manifest queries = load_manifest(manifest_path);

  EvalOptions opts;
  opts.ns = cfg.recall_ns;
  opts.radius_m = cfg.radius_m;
  opts.top_n = cfg.top_n;
  opts.threads = cfg.threads;
  opts.query_modality = modality_from_string(modality_str);
  const RecallTable table = evaluate(model, db, queries, fp, eval_mode_from_string(mode_str), opts);

  const std::string csv = recall_table_csv(table);
  if (!out_csv.empty()) {
    std::ofstream out(out_csv, std::ios::trunc);
    if (!out) throw DataError("cannot write table: " + out_csv);
    out << csv;
  }
  std::cout << recall_table_markdown(table);
  return 0;
}

int cmd_synth(const RunConfig& cfg, const std::string& out_dir, int places,
              const std::vector<std::string>& scenarios) {
  SynthOptions opts;
  opts.places = places > 0 ? places : cfg.synth_places;
  opts.scenarios = scenarios.empty() ? cfg.scenarios : scenarios;
  opts.width = static_cast<int>(cfg.encoder.input_width);
  opts.height = static_cast<int>(cfg.encoder.input_height);
  opts.delta_t_us = cfg.delta_t_us;
  opts.frame = cfg.frame;
  const SynthResult result = synth_generate(cfg.seed, opts, out_dir);
  std::cout << "synthetic dataset with " << result.manifest.size() << " samples -> "
            << result.manifest_path << "\n";
  return 0;
}

int cmd_gradcheck() {
  const std::vector<GradCheckReport> reports = run_gradcheck_suite();
  bool all_pass = true;
  for (const GradCheckReport& r : reports) {
    std::printf("%-28s max_rel_err=%.3e %s\n", r.name.c_str(), r.max_rel_err,
                r.pass ? "PASS" : "FAIL");
    all_pass = all_pass && r.pass;
  }
  return all_pass ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cross-modal visual place recognition pipeline"};
  app.require_subcommand(1);

  GlobalArgs global;
  app.add_option("--config", global.config_path, "config file with key=value lines");
  app.add_option("--seed", global.seed, "seed override");
  app.add_option("--threads", global.threads, "worker thread cap");

  std::string events_path, geotags_path, out_dir;
  auto* convert = app.add_subcommand("convert", "event stream -> distance-surface frames");
  convert->add_option("--events", events_path, "event text file")->required();
  convert->add_option("--geotags", geotags_path, "geotag track file")->required();
  convert->add_option("--out", out_dir, "output directory")->required();

  std::string manifest_path, split_out;
  auto* split = app.add_subcommand("split", "assign geographically buffered train/val/test tags");
  split->add_option("--manifest", manifest_path, "manifest to split")->required();
  split->add_option("--out", split_out, "output manifest (defaults to in-place)");

  std::string train_manifest, checkpoint_path, loss_log_path;
  auto* train_cmd = app.add_subcommand("train", "end-to-end training");
  train_cmd->add_option("--manifest", train_manifest, "dataset manifest")->required();
  train_cmd->add_option("--checkpoint", checkpoint_path, "output checkpoint")->required();
  train_cmd->add_option("--loss-log", loss_log_path, "loss log csv path");

  std::string db_manifest, db_checkpoint, db_out;
  bool db_append = false;
  auto* build_db_cmd = app.add_subcommand("build-db", "encode image manifest into a database");
  build_db_cmd->add_option("--manifest", db_manifest, "image manifest")->required();
  build_db_cmd->add_option("--checkpoint", db_checkpoint, "model checkpoint")->required();
  build_db_cmd->add_option("--out", db_out, "output database file")->required();
  build_db_cmd->add_flag("--append", db_append, "append to an existing database");

  std::string q_db, q_checkpoint, q_frame;
  int q_topn = 0;
  auto* query_cmd = app.add_subcommand("query", "query a database with an event frame");
  query_cmd->add_option("--db", q_db, "database file")->required();
  query_cmd->add_option("--checkpoint", q_checkpoint, "model checkpoint")->required();
  query_cmd->add_option("--frame", q_frame, "event frame (.xvfr)")->required();
  query_cmd->add_option("--topn", q_topn, "candidate depth");

  std::string e_db, e_checkpoint, e_manifest, e_mode = "hybrid", e_modality = "event", e_out;
  auto* eval_cmd = app.add_subcommand("eval", "recall@N evaluation");
  eval_cmd->add_option("--db", e_db, "database file")->required();
  eval_cmd->add_option("--checkpoint", e_checkpoint, "model checkpoint")->required();
  eval_cmd->add_option("--manifest", e_manifest, "query manifest")->required();
  eval_cmd->add_option("--mode", e_mode, "retrieval-only or hybrid");
  eval_cmd->add_option("--query-modality", e_modality, "event or image");
  eval_cmd->add_option("--out", e_out, "recall table csv path");

  std::string synth_out;
  int synth_places = 0;
  std::vector<std::string> synth_scenarios;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic cross-modal dataset");
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  synth_cmd->add_option("--places", synth_places, "number of places");
  synth_cmd->add_option("--scenarios", synth_scenarios, "scenario list")->delimiter(',');

  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference gradient validation");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const RunConfig cfg = global.resolve();
    if (convert->parsed()) return cmd_convert(cfg, events_path, geotags_path, out_dir);
    if (split->parsed()) return cmd_split(cfg, manifest_path, split_out);
    if (train_cmd->parsed()) return cmd_train(cfg, train_manifest, checkpoint_path, loss_log_path);
    if (build_db_cmd->parsed())
      return cmd_build_db(cfg, db_manifest, db_checkpoint, db_out, db_append);
    if (query_cmd->parsed()) return cmd_query(cfg, q_db, q_checkpoint, q_frame, q_topn);
    if (eval_cmd->parsed())
      return cmd_eval(cfg, e_db, e_checkpoint, e_manifest, e_mode, e_modality, e_out);
    if (synth_cmd->parsed()) return cmd_synth(cfg, synth_out, synth_places, synth_scenarios);
    if (gradcheck_cmd->parsed()) return cmd_gradcheck();
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
