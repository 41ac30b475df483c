#include "ttoreg_cli/commands.hpp"

#include <CLI11.hpp>
#include <fstream>
#include <iostream>

#include "ttoreg/affine.hpp"
#include "ttoreg/checkpoint.hpp"
#include "ttoreg/resample.hpp"
#include "ttoreg/warp.hpp"

namespace ttoreg::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Removes every registered path unless commit() is called.
class OutputGuard {
 public:
  ~OutputGuard() {
    if (committed_) return;
    std::error_code ec;
    for (auto it = paths_.rbegin(); it != paths_.rend(); ++it) fs::remove_all(*it, ec);
  }
  const fs::path& add(const fs::path& p) {
    paths_.push_back(p);
    return paths_.back();
  }
  void commit() { committed_ = true; }

 private:
  std::vector<fs::path> paths_;
  bool committed_ = false;
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw UserError("cannot write " + path.string());
  out << text << "\n";
  if (!out) throw UserError("failed writing " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UserError(path.string() + " is not valid JSON: " + e.what());
  }
}

// Paths of the volume and its raw sidecar, when any.
std::vector<fs::path> save_volume_tracked(const Volume3D& v, const fs::path& stem, VolumeFormat f) {
  const fs::path p = with_format_extension(stem, f);
  save_volume(v, p, f);
  if (f == VolumeFormat::RawJson) return {p, fs::path(p).replace_extension(".raw")};
  return {p};
}

std::vector<fs::path> save_field_tracked(const Field3D& u, const Spacing3& sp, const fs::path& stem, VolumeFormat f) {
  const fs::path p = with_format_extension(stem, f);
  save_field(u, sp, p, f);
  if (f == VolumeFormat::RawJson) return {p, fs::path(p).replace_extension(".raw")};
  return {p};
}

Volume3D load_checked(const fs::path& p) {
  if (!fs::exists(p)) throw UserError("input not found: " + p.string());
  return load_volume(p);
}

Volume3D match_grid(const Volume3D& v, const Shape3& target) {
  return v.shape() == target ? v : resample(v, target, ResampleMethod::Trilinear);
}

std::string provenance(const RunConfig& cfg, const char* stage) {
  return json{{"stage", stage}, {"config_hash", cfg.hash()}}.dump();
}

fs::path default_log(const fs::path& checkpoint, const fs::path& log) {
  return log.empty() ? fs::path(checkpoint.string() + ".log.jsonl") : log;
}

void run_stage(const StageTrain& stage, const fs::path& checkpoint, const fs::path& log_path,
               const std::function<TrainResult(const TrainConfig&, const EpochCallback&)>& fn, const std::string& prov) {
  TrainConfig tc = stage.train;
  tc.checkpoint_path = checkpoint;
  tc.provenance = prov;
  if (log_path.has_parent_path()) fs::create_directories(log_path.parent_path());
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw UserError("cannot write log " + log_path.string());
  fn(tc, [&](const EpochRecord& r) {
    log << to_json_line(r) << "\n";
    log.flush();
    std::cerr << "epoch " << r.epoch << " mean_loss " << r.mean_loss << "\n";
  });
}

}  // namespace

void cmd_synthesize(const RunConfig& cfg, const fs::path& out_dir) {
  const fs::path manifest_path = out_dir / "manifest.json";
  if (fs::exists(manifest_path)) {
    const json old = read_json(manifest_path);
    if (old.value("config_hash", std::string()) != cfg.hash()) {
      throw UserError("refusing to mix datasets: " + manifest_path.string() + " has config hash " +
                      old.value("config_hash", std::string("<none>")) + ", current config hash is " + cfg.hash());
    }
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw UserError("cannot create output directory " + out_dir.string() + ": " + ec.message());

  json pairs = json::array();
  for (int i = 0; i < cfg.synth_count; ++i) {
    const std::uint64_t seed = derive_seed(derive_seed(cfg.seed, 300), static_cast<std::uint64_t>(i));
    const SyntheticPair p = generate_pair(seed, cfg.synth);
    char name[32];
    std::snprintf(name, sizeof(name), "pair_%04d", i);
    const fs::path dir = out_dir / name;
    fs::create_directories(dir);
    save_volume_tracked(p.fixed, dir / "fixed", cfg.format);
    save_volume_tracked(p.moving, dir / "moving", cfg.format);
    save_volume_tracked(p.fixed_labels.as_volume(), dir / "fixed_labels", cfg.format);
    save_volume_tracked(p.moving_labels.as_volume(), dir / "moving_labels", cfg.format);
    save_field_tracked(p.gt_ddf, p.fixed.spacing(), dir / "gt_ddf", cfg.format);
    pairs.push_back({{"index", i}, {"seed", seed}, {"dir", name}, {"mean_gt_magnitude", p.gt_ddf.mean_magnitude()}});
  }
  const json manifest{{"format_version", 1},
                      {"config_hash", cfg.hash()},
                      {"seed", cfg.seed},
                      {"count", cfg.synth_count},
                      {"format", cfg.effective.at("format")},
                      {"synth", cfg.effective.at("synth")},
                      {"pairs", pairs}};
  write_text(manifest_path, manifest.dump(2));
}

void cmd_train_teacher(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& log) {
  if (checkpoint.empty()) throw UserError("train-teacher needs an output checkpoint path");
  if (!(cfg.teacher_net == NetworkConfig::teacher())) {
    std::cerr << "note: training a non-default teacher architecture\n";
  }
  const GeneratorConfig gen = cfg.train_teacher.gen;
  const NetworkConfig net_cfg = cfg.teacher_net;
  run_stage(cfg.train_teacher, checkpoint, default_log(checkpoint, log),
            [&](const TrainConfig& tc, const EpochCallback& cb) {
              if (net_cfg == NetworkConfig::teacher()) return pretrain_teacher(tc, gen, cb);
              throw UserError("network.teacher must match the built-in teacher architecture for train-teacher");
            },
            provenance(cfg, "train-teacher"));
}

void cmd_distill(const RunConfig& cfg, const fs::path& teacher_checkpoint, const fs::path& checkpoint,
                 const fs::path& log) {
  if (teacher_checkpoint.empty()) throw UserError("distill needs --teacher <checkpoint>");
  if (!fs::exists(teacher_checkpoint)) throw UserError("teacher checkpoint not found: " + teacher_checkpoint.string());
  if (checkpoint.empty()) throw UserError("distill needs an output checkpoint path");
  const Checkpoint teacher = load_checkpoint(teacher_checkpoint, cfg.teacher_net);
  const GeneratorConfig gen = cfg.distill.gen;
  const NetworkConfig student = cfg.student_net;
  run_stage(cfg.distill, checkpoint, default_log(checkpoint, log),
            [&](const TrainConfig& tc, const EpochCallback& cb) {
              return distill_student(teacher.network, tc, gen, cb, student);
            },
            provenance(cfg, "distill"));
}

void cmd_register(const RunConfig& cfg, const RegisterArgs& args) {
  if (args.out_dir.empty()) throw UserError("register needs --out <directory>");
  const Checkpoint ck = load_checkpoint(args.checkpoint);
  const Volume3D fixed_raw = load_checked(args.fixed);
  if (!fs::exists(args.moving)) throw UserError("input not found: " + args.moving.string());
  const std::vector<Volume3D> frames = load_series(args.moving);
  const Volume3D fixed = normalize_intensity(fixed_raw);

  OutputGuard guard;
  if (!fs::exists(args.out_dir)) guard.add(args.out_dir);
  fs::create_directories(args.out_dir);
  for (std::size_t t = 0; t < frames.size(); ++t) {
    fs::path dir = args.out_dir;
    if (frames.size() > 1) {
      char name[32];
      std::snprintf(name, sizeof(name), "frame_%04zu", t);
      dir /= name;
      guard.add(dir);
      fs::create_directories(dir);
    }
    const Volume3D moving_raw = match_grid(frames[t], fixed.shape());
    const Volume3D moving = normalize_intensity(moving_raw);

    std::optional<AffineResult> aff;
    const Volume3D* tto_moving = &moving;
    if (cfg.affine_prealign) {
      aff = affine_prealign(fixed, moving, cfg.affine_iterations);
      tto_moving = &aff->warped;
    }
    const RegistrationResult res = tto_register(ck.network, fixed, *tto_moving, cfg.tto);

    Field3D total = res.ddf;
    if (aff) {
      // u_total(x) = u_a(x) + A u(x) for the affine sampling field u_a.
      const Field3D ua = affine_field(aff->params, fixed.shape());
      for (std::size_t i = 0; i < total.voxels(); ++i) {
        const double u[3] = {res.ddf.component(0)[i], res.ddf.component(1)[i], res.ddf.component(2)[i]};
        for (int c = 0; c < 3; ++c) {
          const double* row = &aff->params[3 * c];
          total.component(c)[i] = static_cast<float>(ua.component(c)[i] + row[0] * u[0] + row[1] * u[1] + row[2] * u[2]);
        }
      }
    }
    Volume3D warped = warp(moving_raw, total);
    warped.set_spacing(fixed_raw.spacing());
    warped.set_opaque_header(fixed_raw.opaque_header());

    json outputs;
    for (const auto& p : save_volume_tracked(warped, dir / "warped", cfg.format)) {
      guard.add(p);
      if (!outputs.contains("warped")) outputs["warped"] = p.filename().string();
    }
    for (const auto& p : save_field_tracked(total, fixed_raw.spacing(), dir / "ddf", cfg.format)) {
      guard.add(p);
      if (!outputs.contains("ddf")) outputs["ddf"] = p.filename().string();
    }
    json result{{"frame", t},
                {"fixed", args.fixed.string()},
                {"moving", args.moving.string()},
                {"checkpoint", args.checkpoint.string()},
                {"config_hash", cfg.hash()},
                {"epochs_run", res.epochs_run},
                {"stop_reason", to_string(res.stop_reason)},
                {"seconds", res.seconds},
                {"degraded", res.degraded},
                {"loss_trace", res.loss_trace},
                {"outputs", outputs}};
    if (aff) {
      result["affine"] = {{"params", aff->params},
                          {"ncc_before", aff->ncc_before},
                          {"ncc_after", aff->ncc_after},
                          {"fell_back", aff->fell_back}};
    } else {
      result["affine"] = nullptr;
    }
    write_text(guard.add(dir / "result.json"), result.dump(2));
    std::cerr << "frame " << t << ": " << res.epochs_run << " epochs, " << to_string(res.stop_reason) << "\n";
  }
  guard.commit();
}

void cmd_evaluate(const RunConfig& cfg, const EvaluateArgs& args) {
  if (args.out.empty()) throw UserError("evaluate needs --out <report.json>");
  const Volume3D fixed = normalize_intensity(load_checked(args.fixed));
  const Volume3D moving = normalize_intensity(match_grid(load_checked(args.moving), fixed.shape()));
  std::optional<Mask3D> domain;
  if (!args.domain.empty()) domain = Mask3D::from_volume(match_grid(load_checked(args.domain), fixed.shape()));
  const Mask3D* dom = domain ? &*domain : nullptr;

  const MIMap map = patchwise_mi_map(fixed, moving, dom, cfg.pmm);
  EvalReport report = make_report(map, dom);
  report.inputs = {{"fixed", args.fixed.string()}, {"moving", args.moving.string()}, {"config_hash", cfg.hash()}};
  if (dom) report.inputs.emplace_back("domain", args.domain.string());
  if (args.fixed_mask.empty() != args.moving_mask.empty()) {
    throw UserError("dice/iou need both --fixed-mask and --moving-mask");
  }
  if (!args.fixed_mask.empty()) {
    const Mask3D a = Mask3D::from_volume(load_checked(args.fixed_mask));
    const Mask3D b = Mask3D::from_volume(match_grid(load_checked(args.moving_mask), a.shape()));
    report.dice = dice(a, b);
    report.iou = iou(a, b);
    report.inputs.emplace_back("fixed_mask", args.fixed_mask.string());
    report.inputs.emplace_back("moving_mask", args.moving_mask.string());
  }
  write_text(args.out, report_to_json(report));

  if (!args.overlays_dir.empty()) {
    write_image_stack(overlay_falsecolor(fixed, moving), args.overlays_dir, "falsecolor");
    write_image_stack(overlay_checkerboard(fixed, moving, cfg.checkerboard_tile), args.overlays_dir, "checkerboard");
  }
  if (!args.map_out.empty()) {
    Volume3D values(map.values.shape(), map.values.spacing());
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<float>(map.values[i]);
    const VolumeFormat f = args.map_out.extension().empty() ? cfg.format : format_from_path(args.map_out);
    save_volume(values, with_format_extension(args.map_out, f), f);
  }
  if (!args.table.empty()) {
    if (!report.dice) throw UserError("--table needs --fixed-mask and --moving-mask");
    std::vector<OverlapRow> rows;
    if (fs::exists(args.table)) {
      const json existing = read_json(args.table);
      for (const auto& r : existing.at("rows")) {
        rows.push_back({r.at("case").get<std::string>(), r.at("setting").get<std::string>(), r.at("dice").get<double>(),
                        r.at("iou").get<double>()});
      }
    }
    OverlapRow row{args.case_id, args.setting, *report.dice, *report.iou};
    auto it = std::find_if(rows.begin(), rows.end(),
                           [&](const OverlapRow& r) { return r.case_id == row.case_id && r.setting == row.setting; });
    if (it != rows.end()) {
      *it = row;
    } else {
      rows.push_back(row);
    }
    write_text(args.table, overlap_table_json(rows));
  }
}

int run_cli(int argc, char** argv) {
  CLI::App app{"ttoreg: synthetic-data pretraining, distillation and test-time registration"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("-c,--config", config_path, "JSON run config (defaults apply when omitted)");

  auto* synth = app.add_subcommand("synthesize", "write synthetic pairs and a manifest");
  std::string synth_out;
  synth->add_option("-o,--out", synth_out, "output directory")->required();

  auto* teach = app.add_subcommand("train-teacher", "pretrain the teacher network");
  std::string teach_out, teach_log;
  teach->add_option("-o,--out", teach_out, "checkpoint to write")->required();
  teach->add_option("--log", teach_log, "JSON-lines log (default <out>.log.jsonl)");

  auto* dist = app.add_subcommand("distill", "distil the teacher into the student");
  std::string dist_teacher, dist_out, dist_log;
  dist->add_option("--teacher", dist_teacher, "teacher checkpoint")->required();
  dist->add_option("-o,--out", dist_out, "checkpoint to write")->required();
  dist->add_option("--log", dist_log, "JSON-lines log (default <out>.log.jsonl)");

  auto* reg = app.add_subcommand("register", "test-time optimisation of a pair or series");
  RegisterArgs rargs;
  std::optional<double> max_seconds;
  std::optional<int> max_epochs;
  bool affine = false;
  reg->add_option("--checkpoint", rargs.checkpoint, "network checkpoint")->required();
  reg->add_option("--fixed", rargs.fixed, "fixed volume")->required();
  reg->add_option("--moving", rargs.moving, "moving volume, 4D NIfTI or directory")->required();
  reg->add_option("-o,--out", rargs.out_dir, "output directory")->required();
  reg->add_option("--max-seconds", max_seconds, "same as --tto.max_seconds");
  reg->add_option("--max-epochs", max_epochs, "same as --tto.max_epochs");
  reg->add_flag("--affine", affine, "same as --tto.affine_prealign true");

  auto* ev = app.add_subcommand("evaluate", "patch-wise MI, overlap scores and overlays");
  EvaluateArgs eargs;
  ev->add_option("--fixed", eargs.fixed, "fixed volume")->required();
  ev->add_option("--moving", eargs.moving, "moving or registered volume")->required();
  ev->add_option("-o,--out", eargs.out, "report JSON")->required();
  ev->add_option("--domain", eargs.domain, "domain mask volume (> 0.5 is inside)");
  ev->add_option("--fixed-mask", eargs.fixed_mask, "mask for dice/iou");
  ev->add_option("--moving-mask", eargs.moving_mask, "mask for dice/iou");
  ev->add_option("--overlays", eargs.overlays_dir, "directory for PNG overlays");
  ev->add_option("--map", eargs.map_out, "write the MI map volume");
  ev->add_option("--table", eargs.table, "overlap table JSON to create or extend");
  ev->add_option("--case", eargs.case_id, "table row case id");
  ev->add_option("--setting", eargs.setting, "table row setting");

  auto* show = app.add_subcommand("show-config", "print the effective config and its hash");

  for (auto* sub : {synth, teach, dist, reg, ev, show}) sub->allow_extras();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    std::vector<std::pair<std::string, std::string>> overrides;
    CLI::App* active = app.get_subcommands().front();
    const auto extras = active->remaining();
    for (std::size_t i = 0; i < extras.size(); ++i) {
      const std::string& a = extras[i];
      if (a.rfind("--", 0) != 0) throw UserError("unexpected argument '" + a + "'");
      std::string key = a.substr(2);
      std::string value;
      if (const auto eq = key.find('='); eq != std::string::npos) {
        value = key.substr(eq + 1);
        key = key.substr(0, eq);
      } else {
        if (i + 1 >= extras.size()) throw UserError("override --" + key + " needs a value");
        value = extras[++i];
      }
      if (key.find('.') == std::string::npos && key != "seed" && key != "format") {
        throw UserError("unknown option --" + key);
      }
      overrides.emplace_back(key, value);
    }
    if (max_seconds) overrides.emplace_back("tto.max_seconds", std::to_string(*max_seconds));
    if (max_epochs) overrides.emplace_back("tto.max_epochs", std::to_string(*max_epochs));
    if (affine) overrides.emplace_back("tto.affine_prealign", "true");
    const RunConfig cfg = load_run_config(config_path, overrides);

    if (active == synth) {
      cmd_synthesize(cfg, synth_out);
    } else if (active == teach) {
      cmd_train_teacher(cfg, teach_out, teach_log);
    } else if (active == dist) {
      cmd_distill(cfg, dist_teacher, dist_out, dist_log);
    } else if (active == reg) {
      cmd_register(cfg, rargs);
    } else if (active == ev) {
      cmd_evaluate(cfg, eargs);
    } else {
      std::cout << cfg.effective.dump(2) << "\nconfig_hash " << cfg.hash() << "\n";
    }
    return 0;
  } catch (const UserError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const TrainingError& e) {
    std::cerr << "training failed: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace ttoreg::cli
