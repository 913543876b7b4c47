#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>

#include "deepbet/config.hpp"
#include "deepbet/evaluate.hpp"
#include "deepbet/nifti.hpp"
#include "deepbet/parallel.hpp"
#include "deepbet/phantom.hpp"
#include "deepbet/pipeline.hpp"
#include "deepbet/training.hpp"
#include "deepbet/weights_io.hpp"

namespace deepbet::cli {
namespace fs = std::filesystem;
namespace {

struct Common {
  std::string profile = "desk";
  std::string config;
  std::vector<std::string> overrides;
  int jobs = 1;
};

int default_jobs() {
  if (const char* env = std::getenv("DEEPBET_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
  }
  return 1;
}

void add_config_flags(CLI::App* cmd, Common& c) {
  cmd->add_option("--profile", c.profile, "Built-in defaults: desk or paper")
      ->check(CLI::IsMember({"desk", "paper"}))
      ->capture_default_str();
  cmd->add_option("--config", c.config, "Config file with [section] key = value lines")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "Override one knob, e.g. --set pipeline.margin_fraction=0.12");
}

void add_jobs_flag(CLI::App* cmd, Common& c) {
  cmd->add_option("--jobs,-j", c.jobs, "Images processed in parallel (default $DEEPBET_THREADS or 1)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
}

// defaults < profile < file < --set < dedicated flags
RunConfig resolve(const Common& c) {
  RunConfig cfg = RunConfig::profile(c.profile);
  if (!c.config.empty()) apply_ini_file(cfg, c.config);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::kConfig, "--set expects section.key=value, got " + kv);
    set_option(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

bool has_suffix(const std::string& s, const std::string& suffix) { return s.ends_with(suffix); }

bool is_nifti(const fs::path& p) {
  const std::string name = p.filename().string();
  return has_suffix(name, ".nii") || has_suffix(name, ".nii.gz");
}

std::string nifti_stem(const fs::path& p) {
  std::string name = p.filename().string();
  for (const std::string ext : {".nii.gz", ".nii"}) {
    if (has_suffix(name, ext)) return name.substr(0, name.size() - ext.size());
  }
  return name;
}

std::string strip(const std::string& s, const std::string& suffix) {
  return has_suffix(s, suffix) ? s.substr(0, s.size() - suffix.size()) : s;
}

std::vector<fs::path> sorted_niftis(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::kIoFailure, dir.string() + " is not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && is_nifti(e.path())) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Inputs of a directory: the *_img files when present, else every image that
// is not a *_mask / *_brain output.
std::vector<fs::path> input_images(const fs::path& dir) {
  const auto all = sorted_niftis(dir);
  std::vector<fs::path> img;
  for (const auto& p : all) {
    if (has_suffix(nifti_stem(p), "_img")) img.push_back(p);
  }
  if (!img.empty()) return img;
  for (const auto& p : all) {
    const std::string s = nifti_stem(p);
    if (!has_suffix(s, "_mask") && !has_suffix(s, "_brain")) img.push_back(p);
  }
  return img;
}

std::map<std::string, fs::path> masks_by_id(const fs::path& dir) {
  std::map<std::string, fs::path> out;
  for (const auto& p : sorted_niftis(dir)) {
    const std::string s = nifti_stem(p);
    if (has_suffix(s, "_mask")) out[strip(s, "_mask")] = p;
  }
  return out;
}

void write_outputs(const ExtractResult& r, const Volume& input, const fs::path& brain, const fs::path& mask,
                   const fs::path& prob) {
  if (!mask.empty()) write_nifti(r.mask.to_volume(input), mask, DType::kU8);
  if (!brain.empty()) write_nifti(r.masked_image, brain, DType::kF32);
  if (!prob.empty()) write_nifti(r.probability, prob, DType::kF32);
}

fs::path default_mask_path(const fs::path& output) {
  return output.parent_path() / (nifti_stem(output) + "_mask.nii.gz");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"deepbet: two-stage LinkNet brain extraction for T1w MRI"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  // extract
  Common ex_common;
  ex_common.jobs = default_jobs();
  std::string ex_input;
  std::string ex_output;
  std::string ex_weights;
  std::string ex_mask;
  std::string ex_prob;
  std::optional<double> ex_threshold;
  std::string ex_mode;
  auto* ex = app.add_subcommand("extract", "Brain mask and skull-stripped image for one image or a directory");
  ex->add_option("--input", ex_input, "Input NIfTI, or a directory of them")->required();
  ex->add_option("--output", ex_output,
                 "Skull-stripped image (file input) or output directory (directory input)")
      ->required();
  ex->add_option("--weights", ex_weights, "Weights set written by `deepbet train`")->required()->check(CLI::ExistingFile);
  ex->add_option("--mask-out", ex_mask, "Binary mask path (default: <output stem>_mask.nii.gz)");
  ex->add_option("--prob-out", ex_prob, "Probability map before binarization (file input only)");
  ex->add_option("--threshold", ex_threshold, "Binarization threshold (default 0.5)")->check(CLI::Range(0.0, 1.0));
  ex->add_option("--mode", ex_mode, "Stage-2 predictor: 3d or 2d")->check(CLI::IsMember({"3d", "2d"}));
  add_config_flags(ex, ex_common);
  add_jobs_flag(ex, ex_common);

  // train
  Common tr_common;
  std::string tr_data;
  std::int64_t tr_phantoms = 0;
  std::int64_t tr_phantom_size = 96;
  std::uint64_t tr_phantom_seed = 0;
  std::string tr_out;
  std::string tr_mode;
  std::string tr_log_dir;
  auto* tr = app.add_subcommand("train", "Train the networks of the pipeline");
  auto* data_opt = tr->add_option("--data", tr_data, "Directory of <id>_img / <id>_mask NIfTI pairs");
  auto* ph_opt = tr->add_option("--phantoms", tr_phantoms, "Train on N generated phantoms (even seeds) instead")
                     ->check(CLI::PositiveNumber);
  data_opt->excludes(ph_opt);
  tr->add_option("--phantom-size", tr_phantom_size, "Edge length of generated phantoms")->capture_default_str();
  tr->add_option("--phantom-seed", tr_phantom_seed, "First seed of generated phantoms")->capture_default_str();
  tr->add_option("--out", tr_out, "Output weights set")->required();
  tr->add_option("--mode", tr_mode, "Networks to train: 3d, 2d or both (default: pipeline.mode)")
      ->check(CLI::IsMember({"3d", "2d", "both"}));
  tr->add_option("--log-dir", tr_log_dir, "Per-network loss CSV and checkpoint directory");
  add_config_flags(tr, tr_common);

  // phantom
  std::int64_t ph_count = 0;
  std::string ph_out;
  std::int64_t ph_size = 64;
  std::uint64_t ph_seed = 0;
  std::string ph_split = "all";
  double ph_bias = 0.0;
  double ph_rotation = 0.0;
  auto* ph = app.add_subcommand("phantom", "Write synthetic head phantoms as <id>_img / <id>_mask pairs");
  ph->add_option("--count", ph_count, "Number of phantoms")->required()->check(CLI::NonNegativeNumber);
  ph->add_option("--out", ph_out, "Output directory")->required();
  ph->add_option("--size", ph_size, "Edge length in voxels")->capture_default_str()->check(CLI::Range(16, 1024));
  ph->add_option("--seed", ph_seed, "First seed")->capture_default_str();
  ph->add_option("--split", ph_split, "all, train (even seeds) or held-out (odd seeds)")
      ->check(CLI::IsMember({"all", "train", "held-out"}))
      ->capture_default_str();
  ph->add_option("--bias", ph_bias, "Bias-field magnitude (max |log field|)")->capture_default_str();
  ph->add_option("--rotation", ph_rotation, "Maximum random rotation in degrees")->capture_default_str();

  // eval
  Common ev_common;
  ev_common.jobs = default_jobs();
  std::string ev_pred;
  std::string ev_truth;
  std::string ev_report;
  double ev_threshold = 0.5;
  bool ev_calibrate = false;
  auto* ev = app.add_subcommand("eval", "Dice of predicted masks against ground truth");
  ev->add_option("--pred", ev_pred, "Directory of <id>_mask predictions")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--truth", ev_truth, "Directory of <id>_mask ground truth")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--report", ev_report, "CSV report path")->required();
  ev->add_option("--threshold", ev_threshold, "Ground-truth binarization threshold")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  ev->add_flag("--calibrate", ev_calibrate, "Pick the ground-truth threshold from the 0.1..0.9 grid");
  add_jobs_flag(ev, ev_common);

  // bench
  Common bn_common;
  bn_common.jobs = default_jobs();
  std::string bn_weights;
  std::string bn_input;
  int bn_reps = 3;
  std::string bn_mode;
  auto* bn = app.add_subcommand("bench", "Images per minute of the full extract path (I/O excluded)");
  bn->add_option("--weights", bn_weights, "Weights set")->required()->check(CLI::ExistingFile);
  bn->add_option("--input", bn_input, "Directory of input images")->required()->check(CLI::ExistingDirectory);
  bn->add_option("--reps", bn_reps, "Repetitions (median reported)")->capture_default_str()->check(CLI::PositiveNumber);
  bn->add_option("--mode", bn_mode, "Stage-2 predictor: 3d or 2d")->check(CLI::IsMember({"3d", "2d"}));
  add_config_flags(bn, bn_common);
  add_jobs_flag(bn, bn_common);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    const auto active = app.get_subcommands();
    err << (active.empty() ? app.help() : active.front()->help());
    return kUsage;
  }

  try {
    if (ex->parsed()) {
      RunConfig cfg = resolve(ex_common);
      if (ex_threshold) cfg.pipeline.binarize_threshold = *ex_threshold;
      if (!ex_mode.empty()) cfg.pipeline.mode = ex_mode == "2d" ? PredictMode::k2D : PredictMode::k3D;
      cfg.pipeline.validate();
      const WeightsSet w = load_weights_set(ex_weights);
      if (fs::is_directory(ex_input)) {
        fs::create_directories(ex_output);
        const fs::path mask_dir = ex_mask.empty() ? fs::path(ex_output) : fs::path(ex_mask);
        fs::create_directories(mask_dir);
        const auto inputs = input_images(ex_input);
        std::mutex log;
        parallel_for(static_cast<std::int64_t>(inputs.size()), ex_common.jobs, [&](std::int64_t i) {
          const fs::path& p = inputs[static_cast<std::size_t>(i)];
          const std::string id = strip(nifti_stem(p), "_img");
          const Volume v = read_nifti(p);
          const ExtractResult r = extract(v, w, cfg.pipeline);
          write_outputs(r, v, fs::path(ex_output) / (id + "_brain.nii.gz"), mask_dir / (id + "_mask.nii.gz"), {});
          const std::lock_guard lock(log);
          out << id << ": " << r.mask.count() << " brain voxels\n";
        });
      } else {
        const Volume v = read_nifti(ex_input);
        const ExtractResult r = extract(v, w, cfg.pipeline);
        const fs::path mask = ex_mask.empty() ? default_mask_path(ex_output) : fs::path(ex_mask);
        write_outputs(r, v, ex_output, mask, ex_prob);
        out << "mask: " << mask.string() << " (" << r.mask.count() << " voxels)\n";
      }
      return kOk;
    }

    if (tr->parsed()) {
      RunConfig cfg = resolve(tr_common);
      bool both = false;
      if (tr_mode == "both") {
        both = true;
      } else if (!tr_mode.empty()) {
        cfg.pipeline.mode = tr_mode == "2d" ? PredictMode::k2D : PredictMode::k3D;
      }
      Dataset data;
      if (tr_phantoms > 0) {
        std::vector<std::uint64_t> seeds;
        for (std::int64_t i = 0; i < tr_phantoms; ++i) seeds.push_back(split_seed(tr_phantom_seed, i, false));
        data = phantom_dataset(seeds, {tr_phantom_size, tr_phantom_size, tr_phantom_size});
      } else if (!tr_data.empty()) {
        data = directory_dataset(tr_data);
      } else {
        err << "train: one of --data or --phantoms is required\n" << tr->help();
        return kUsage;
      }
      if (data.size == 0) throw Error(ErrorCode::kIoFailure, "no training pairs found");
      out << "preparing " << data.size << " training pairs\n";
      const PreparedSet prepared(data, cfg.pipeline.preprocess);
      const WeightsSet w = train_pipeline(
          cfg, prepared,
          [&out](const std::string& role, std::int64_t epoch, double loss) {
            out << role << " epoch " << epoch + 1 << " loss " << loss << '\n' << std::flush;
          },
          both, tr_log_dir);
      save_weights_set(w, tr_out);
      out << "weights: " << tr_out << '\n';
      return kOk;
    }

    if (ph->parsed()) {
      fs::create_directories(ph_out);
      const Dims dims{ph_size, ph_size, ph_size};
      for (std::int64_t i = 0; i < ph_count; ++i) {
        PhantomSpec spec;
        spec.seed = ph_split == "all" ? ph_seed + static_cast<std::uint64_t>(i)
                                      : split_seed(ph_seed, i, ph_split == "held-out");
        spec.dims = dims;
        spec.bias_magnitude = ph_bias;
        spec.max_rotation_deg = ph_rotation;
        const Phantom p = generate(spec);
        const std::string id = "phantom_" + std::to_string(spec.seed);
        write_nifti(p.image, fs::path(ph_out) / (id + "_img.nii.gz"), DType::kF32);
        write_nifti(p.mask, fs::path(ph_out) / (id + "_mask.nii.gz"), DType::kF32);
      }
      out << "wrote " << ph_count << " phantoms to " << ph_out << '\n';
      return kOk;
    }

    if (ev->parsed()) {
      const auto pred = masks_by_id(ev_pred);
      const auto truth = masks_by_id(ev_truth);
      std::vector<std::string> ids;
      for (const auto& [id, path] : pred) {
        if (truth.count(id) == 0) throw Error(ErrorCode::kIoFailure, "no ground truth for " + id);
        ids.push_back(id);
      }
      if (ids.empty()) throw Error(ErrorCode::kIoFailure, "no <id>_mask files in " + ev_pred);
      std::vector<ProbabilityMask> gt(ids.size(), Volume::zeros({1, 1, 1}));
      std::vector<BinaryMask> pm(ids.size());
      parallel_for(static_cast<std::int64_t>(ids.size()), ev_common.jobs, [&](std::int64_t i) {
        const auto k = static_cast<std::size_t>(i);
        gt[k] = read_nifti(truth.at(ids[k]));
        pm[k] = binarize(read_nifti(pred.at(ids[k])), 0.5);
        if (gt[k].dims() != pm[k].dims) throw Error(ErrorCode::kShapeMismatch, "dims differ for " + ids[k]);
      });
      DiceReport report;
      const auto grid = default_threshold_grid();
      report.threshold = ev_calibrate ? calibrate_threshold(gt, pm, grid) : ev_threshold;
      for (std::size_t k = 0; k < ids.size(); ++k) {
        report.samples.push_back({ids[k], dice(binarize(gt[k], report.threshold), pm[k])});
      }
      report.hardware = hardware_descriptor();
      report.threads = ev_common.jobs;
      std::ofstream f(ev_report);
      f << report.to_csv();
      if (!f) throw Error(ErrorCode::kIoFailure, "cannot write " + ev_report);
      out << "n=" << ids.size() << " median=" << report.median_dice() << " min=" << report.min_dice()
          << " max=" << report.max_dice() << " threshold=" << report.threshold << '\n';
      return kOk;
    }

    if (bn->parsed()) {
      RunConfig cfg = resolve(bn_common);
      if (!bn_mode.empty()) cfg.pipeline.mode = bn_mode == "2d" ? PredictMode::k2D : PredictMode::k3D;
      cfg.pipeline.validate();
      const WeightsSet w = load_weights_set(bn_weights);
      std::vector<Volume> volumes;
      for (const auto& p : input_images(bn_input)) volumes.push_back(read_nifti(p));
      if (volumes.empty()) throw Error(ErrorCode::kIoFailure, "no input images in " + bn_input);
      const auto r = benchmark([&](const Volume& v) { extract(v, w, cfg.pipeline); }, volumes, bn_reps,
                               bn_common.jobs);
      out << "images_per_minute=" << r.images_per_minute << " images=" << volumes.size() << " reps=" << bn_reps
          << " threads=" << r.threads << '\n'
          << "hardware=" << r.hardware << '\n';
      return kOk;
    }
  } catch (const Error& e) {
    err << "deepbet: " << e.what() << '\n';
    return e.code() == ErrorCode::kConfig ? kUsage : kData;
  } catch (const std::exception& e) {
    err << "deepbet: internal error: " << e.what() << '\n';
    return kInternal;
  }
  return kInternal;
}

}  // namespace deepbet::cli
