#include "deepbet/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "deepbet/error.hpp"

namespace deepbet {
namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw Error(ErrorCode::kConfig, "invalid value '" + value + "' for " + key);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(trim(item));
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  T v{};
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || end != s.data() + s.size()) bad_value(key, raw);
  return v;
}

bool parse_bool(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  bad_value(key, raw);
}

template <typename T, std::size_t N>
std::array<T, N> parse_array(const std::string& key, const std::string& raw) {
  const auto parts = split_list(raw);
  if (parts.size() != N) bad_value(key, raw);
  std::array<T, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = parse_number<T>(key, parts[i]);
  return out;
}

std::string format_double(double v) {
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

template <typename T, std::size_t N>
std::string format_array(const std::array<T, N>& a) {
  std::string out;
  for (std::size_t i = 0; i < N; ++i) {
    if (i > 0) out += ", ";
    if constexpr (std::is_floating_point_v<T>) {
      out += format_double(a[i]);
    } else {
      out += std::to_string(a[i]);
    }
  }
  return out;
}

NormType parse_norm(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  if (s == "instance") return NormType::kInstance;
  if (s == "batch") return NormType::kBatch;
  bad_value(key, raw);
}

const char* norm_name(NormType n) { return n == NormType::kInstance ? "instance" : "batch"; }

std::vector<View> parse_views(const std::string& key, const std::string& raw) {
  std::vector<View> out;
  for (const auto& s : split_list(raw)) {
    if (s == "sagittal") {
      out.push_back(View::kSagittal);
    } else if (s == "coronal") {
      out.push_back(View::kCoronal);
    } else if (s == "axial") {
      out.push_back(View::kAxial);
    } else {
      bad_value(key, raw);
    }
  }
  if (out.empty()) bad_value(key, raw);
  return out;
}

struct Option {
  std::string section;
  std::string key;
  std::function<void(RunConfig&, const std::string& full, const std::string& value)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define DEEPBET_NUM(sec, name, type, expr)                                                             \
  Option {                                                                                            \
    sec, name, [](RunConfig& c, const std::string& k, const std::string& v) { expr = parse_number<type>(k, v); }, \
        [](const RunConfig& c) {                                                                      \
          if constexpr (std::is_floating_point_v<type>) {                                             \
            return format_double(expr);                                                               \
          } else {                                                                                    \
            return std::to_string(expr);                                                              \
          }                                                                                           \
        }                                                                                             \
  }

#define DEEPBET_BOOL(sec, name, expr)                                                                \
  Option {                                                                                            \
    sec, name, [](RunConfig& c, const std::string& k, const std::string& v) { expr = parse_bool(k, v); }, \
        [](const RunConfig& c) { return std::string(expr ? "true" : "false"); }                      \
  }

#define DEEPBET_ARRAY(sec, name, type, n, expr)                                                      \
  Option {                                                                                            \
    sec, name,                                                                                        \
        [](RunConfig& c, const std::string& k, const std::string& v) { expr = parse_array<type, n>(k, v); }, \
        [](const RunConfig& c) { return format_array(expr); }                                         \
  }

const std::vector<Option>& options() {
  static const std::vector<Option> table = {
      DEEPBET_NUM("preprocess", "q_lo", double, c.pipeline.preprocess.q_lo),
      DEEPBET_NUM("preprocess", "q_hi", double, c.pipeline.preprocess.q_hi),
      DEEPBET_NUM("preprocess", "target_mean", double, c.pipeline.preprocess.target_mean),
      DEEPBET_NUM("preprocess", "target_std", double, c.pipeline.preprocess.target_std),
      DEEPBET_NUM("preprocess", "bias_order", int, c.pipeline.preprocess.bias_order),
      DEEPBET_BOOL("preprocess", "bias_enabled", c.pipeline.preprocess.bias_enabled),

      DEEPBET_NUM("augment", "p_flip", double, c.augment.p_flip),
      DEEPBET_NUM("augment", "p_rotate", double, c.augment.p_rotate),
      DEEPBET_NUM("augment", "p_zoom", double, c.augment.p_zoom),
      DEEPBET_NUM("augment", "p_warp", double, c.augment.p_warp),
      DEEPBET_NUM("augment", "p_lighting", double, c.augment.p_lighting),
      DEEPBET_NUM("augment", "p_bias", double, c.augment.p_bias),
      DEEPBET_NUM("augment", "p_motion", double, c.augment.p_motion),
      DEEPBET_NUM("augment", "p_noise", double, c.augment.p_noise),
      DEEPBET_NUM("augment", "p_blur", double, c.augment.p_blur),
      DEEPBET_NUM("augment", "p_ghosting", double, c.augment.p_ghosting),
      DEEPBET_NUM("augment", "p_slice_merge", double, c.augment.p_slice_merge),
      DEEPBET_NUM("augment", "max_rotate_deg", double, c.augment.max_rotate_deg),
      DEEPBET_NUM("augment", "max_lighting", double, c.augment.max_lighting),
      DEEPBET_NUM("augment", "max_warp", double, c.augment.max_warp),
      DEEPBET_ARRAY("augment", "zoom_range", double, 2, c.augment.zoom_range),
      DEEPBET_NUM("augment", "bias_order", int, c.augment.bias_order),
      DEEPBET_NUM("augment", "bias_magnitude", double, c.augment.bias_magnitude),
      DEEPBET_ARRAY("augment", "ghost_count_range", int, 2, c.augment.ghost_count_range),
      DEEPBET_ARRAY("augment", "ghost_intensity_range", double, 2, c.augment.ghost_intensity_range),
      DEEPBET_ARRAY("augment", "noise_std_range", double, 2, c.augment.noise_std_range),
      DEEPBET_ARRAY("augment", "blur_sigma_range", double, 2, c.augment.blur_sigma_range),
      DEEPBET_ARRAY("augment", "motion_severity_range", double, 2, c.augment.motion_severity_range),
      DEEPBET_NUM("augment", "slice_merge_alpha_max", double, c.augment.slice_merge_alpha_max),
      DEEPBET_BOOL("augment", "slice_merge_normalized", c.augment.slice_merge_normalized),

      DEEPBET_NUM("network", "encoder_depth", int, c.network_3d.encoder_depth),
      DEEPBET_NUM("network", "base_channels", int, c.network_3d.base_channels),
      Option{"network", "norm",
             [](RunConfig& c, const std::string& k, const std::string& v) { c.network_3d.norm = parse_norm(k, v); },
             [](const RunConfig& c) { return std::string(norm_name(c.network_3d.norm)); }},
      DEEPBET_NUM("network", "encoder_depth_2d", int, c.network_2d.encoder_depth),
      DEEPBET_NUM("network", "base_channels_2d", int, c.network_2d.base_channels),
      Option{"network", "norm_2d",
             [](RunConfig& c, const std::string& k, const std::string& v) { c.network_2d.norm = parse_norm(k, v); },
             [](const RunConfig& c) { return std::string(norm_name(c.network_2d.norm)); }},

      DEEPBET_NUM("train", "lr", double, c.train_3d.lr),
      DEEPBET_NUM("train", "lambda_focal", double, c.train_3d.lambda_focal),
      DEEPBET_NUM("train", "focal_gamma", double, c.train_3d.focal_gamma),
      DEEPBET_NUM("train", "batch_size", int, c.train_3d.batch_size),
      DEEPBET_NUM("train", "epochs", std::int64_t, c.train_3d.epochs),
      DEEPBET_NUM("train", "stage2_epochs", std::int64_t, c.stage2_epochs),
      DEEPBET_NUM("train", "steps_per_epoch", std::int64_t, c.train_3d.steps_per_epoch),
      DEEPBET_BOOL("train", "stage2_warm_start", c.stage2_warm_start),
      DEEPBET_NUM("train", "lookahead_k", int, c.train_3d.lookahead_k),
      DEEPBET_NUM("train", "lookahead_alpha", double, c.train_3d.lookahead_alpha),
      DEEPBET_NUM("train", "weight_decay", double, c.train_3d.weight_decay),
      DEEPBET_NUM("train", "flat_fraction", double, c.train_3d.flat_fraction),
      DEEPBET_ARRAY("train", "lr_multipliers", double, 3, c.train_3d.lr_multipliers),
      DEEPBET_NUM("train", "grad_clip", double, c.train_3d.grad_clip),
      DEEPBET_NUM("train", "seed", std::uint64_t, c.train_3d.seed),
      DEEPBET_BOOL("train", "augment", c.train_3d.augment),
      DEEPBET_NUM("train", "lr_2d", double, c.train_2d.lr),
      DEEPBET_NUM("train", "batch_size_2d", int, c.train_2d.batch_size),
      DEEPBET_NUM("train", "epochs_2d", std::int64_t, c.epochs_2d),
      DEEPBET_NUM("train", "steps_per_epoch_2d", std::int64_t, c.train_2d.steps_per_epoch),
      DEEPBET_ARRAY("train", "lr_multipliers_2d", double, 3, c.train_2d.lr_multipliers),

      DEEPBET_NUM("pipeline", "stage1_size", int, c.pipeline.stage1_size),
      DEEPBET_NUM("pipeline", "stage2_size", int, c.pipeline.stage2_size),
      DEEPBET_NUM("pipeline", "margin_fraction", double, c.pipeline.margin_fraction),
      DEEPBET_NUM("pipeline", "binarize_threshold", double, c.pipeline.binarize_threshold),
      DEEPBET_NUM("pipeline", "stage1_threshold", double, c.pipeline.stage1_threshold),
      DEEPBET_NUM("pipeline", "multi_slice_n", int, c.pipeline.multi_slice_n),
      Option{"pipeline", "views",
             [](RunConfig& c, const std::string& k, const std::string& v) { c.pipeline.views = parse_views(k, v); },
             [](const RunConfig& c) {
               std::string out;
               for (View v : c.pipeline.views) out += (out.empty() ? "" : ", ") + std::string(view_name(v));
               return out;
             }},
      Option{"pipeline", "mode",
             [](RunConfig& c, const std::string& k, const std::string& v) {
               const std::string s = trim(v);
               if (s == "3d") {
                 c.pipeline.mode = PredictMode::k3D;
               } else if (s == "2d") {
                 c.pipeline.mode = PredictMode::k2D;
               } else {
                 bad_value(k, v);
               }
             },
             [](const RunConfig& c) { return std::string(c.pipeline.mode == PredictMode::k3D ? "3d" : "2d"); }},
      DEEPBET_NUM("pipeline", "slice_batch", int, c.pipeline.slice_batch),
  };
  return table;
}

#undef DEEPBET_NUM
#undef DEEPBET_BOOL
#undef DEEPBET_ARRAY

const Option& find_option(const std::string& section, const std::string& key) {
  for (const auto& o : options()) {
    if (o.section == section && o.key == key) return o;
  }
  throw Error(ErrorCode::kConfig, "unknown option " + section + "." + key);
}

// Settings shared by the 3D and 2D training runs follow the [train] values.
void sync_shared_train(RunConfig& c) {
  TrainConfig& t = c.train_2d;
  const TrainConfig& s = c.train_3d;
  t.lambda_focal = s.lambda_focal;
  t.focal_gamma = s.focal_gamma;
  t.lookahead_k = s.lookahead_k;
  t.lookahead_alpha = s.lookahead_alpha;
  t.weight_decay = s.weight_decay;
  t.flat_fraction = s.flat_fraction;
  t.grad_clip = s.grad_clip;
  t.seed = s.seed;
  t.augment = s.augment;
}

}  // namespace

void RunConfig::validate() const {
  augment.validate();
  network_3d.validate();
  network_2d.validate();
  train_3d.validate();
  train_2d.validate();
  if (stage2_epochs < 1 || epochs_2d < 1) throw Error(ErrorCode::kConfig, "epochs must be >= 1");
  pipeline.validate();
}

RunConfig RunConfig::desk() {
  RunConfig c;
  c.pipeline = PipelineConfig::desk();
  c.network_3d = NetworkConfig::linknet_3d(8);
  c.network_2d = NetworkConfig::linknet_2d(16);
  c.train_3d.lr = 0.01;
  c.train_3d.epochs = 3;
  c.stage2_epochs = 2;
  c.stage2_warm_start = true;
  c.train_2d.lr = 0.01;
  c.train_2d.batch_size = 8;
  c.epochs_2d = 2;
  sync_shared_train(c);
  return c;
}

RunConfig RunConfig::paper() {
  RunConfig c;
  c.pipeline = PipelineConfig::paper();
  c.train_3d.epochs = 200;
  c.stage2_epochs = 200;
  c.train_2d.batch_size = 32;
  c.train_2d.lr_multipliers = {0.0, 0.2, 1.0};
  c.epochs_2d = 200;
  sync_shared_train(c);
  return c;
}

RunConfig RunConfig::profile(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "paper") return paper();
  throw Error(ErrorCode::kConfig, "unknown profile '" + name + "' (expected desk or paper)");
}

void apply_ini(RunConfig& cfg, const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw Error(ErrorCode::kConfig, e.what());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw Error(ErrorCode::kConfig, "key '" + section + "' outside of a [section]");
    for (const auto& [key, value] : body) {
      find_option(section, key).set(cfg, section + "." + key, value.data());
    }
  }
  sync_shared_train(cfg);
}

void apply_ini_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  apply_ini(cfg, buf.str());
}

void set_option(RunConfig& cfg, const std::string& dotted_key, const std::string& value) {
  const auto dot = dotted_key.find('.');
  if (dot == std::string::npos) throw Error(ErrorCode::kConfig, "option must be section.key: " + dotted_key);
  find_option(dotted_key.substr(0, dot), dotted_key.substr(dot + 1)).set(cfg, dotted_key, value);
  sync_shared_train(cfg);
}

std::vector<std::string> option_names() {
  std::vector<std::string> out;
  for (const auto& o : options()) out.push_back(o.section + "." + o.key);
  return out;
}

std::string to_ini(const RunConfig& cfg) {
  std::string out;
  std::string section;
  for (const auto& o : options()) {
    if (o.section != section) {
      out += (section.empty() ? "[" : "\n[") + o.section + "]\n";
      section = o.section;
    }
    out += o.key + " = " + o.get(cfg) + "\n";
  }
  return out;
}

WeightsSet train_pipeline(const RunConfig& cfg, const PreparedSet& data, const ProgressFn& progress,
                          bool both_modes, const std::filesystem::path& log_dir) {
  cfg.validate();
  if (!log_dir.empty()) std::filesystem::create_directories(log_dir);
  auto outputs = [&log_dir](TrainConfig t, const std::string& role) {
    if (!log_dir.empty()) {
      t.loss_log = log_dir / (role + "_loss.csv");
      t.checkpoint = log_dir / (role + "_checkpoint.dbw");
    }
    return t;
  };
  auto report = [&progress](const std::string& role) {
    return [&progress, role](std::int64_t epoch, double loss) {
      if (progress) progress(role, epoch, loss);
    };
  };
  const bool aug = cfg.train_3d.augment;
  WeightsSet out;
  out["stage1"] = train(cfg.network_3d, outputs(cfg.train_3d, "stage1"), stage1_source(data, cfg.pipeline, cfg.augment, aug), nullptr,
                        report("stage1"))
                      .weights;
  if (both_modes || cfg.pipeline.mode == PredictMode::k3D) {
    TrainConfig t = outputs(cfg.train_3d, "stage2");
    t.epochs = cfg.stage2_epochs;
    t.seed = cfg.train_3d.seed + 1;
    const NetworkWeights* init = cfg.stage2_warm_start ? &out.at("stage1") : nullptr;
    out["stage2"] =
        train(cfg.network_3d, t, stage2_source(data, cfg.pipeline, cfg.augment, aug), init, report("stage2")).weights;
  }
  if (!both_modes && cfg.pipeline.mode == PredictMode::k3D) return out;
  for (View v : cfg.pipeline.views) {
    TrainConfig t = outputs(cfg.train_2d, view_name(v));
    t.epochs = cfg.epochs_2d;
    t.seed = cfg.train_2d.seed + 2 + static_cast<std::uint64_t>(v);
    out[view_name(v)] =
        train(cfg.network_2d, t, view_source(data, v, cfg.pipeline, cfg.augment, aug), nullptr, report(view_name(v)))
            .weights;
  }
  return out;
}

}  // namespace deepbet
