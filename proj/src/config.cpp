#include "xvpr/config.hpp"

#include <fstream>
#include <sstream>

namespace xvpr {

namespace {

std::int64_t parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const std::int64_t v = std::stoll(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw UsageError("config: key '" + key + "' expects an integer, got '" + value + "'");
  }
}

double parse_real(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw UsageError("config: key '" + key + "' expects a number, got '" + value + "'");
  }
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& value,
                          T (*one)(const std::string&, const std::string&)) {
  std::vector<T> out;
  std::istringstream in(value);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(one(key, item));
  if (out.empty()) throw UsageError("config: key '" + key + "' expects a comma-separated list");
  return out;
}

std::int64_t positive(const std::string& key, std::int64_t v) {
  if (v <= 0) throw UsageError("config: key '" + key + "' must be positive");
  return v;
}

double positive(const std::string& key, double v) {
  if (v <= 0.0) throw UsageError("config: key '" + key + "' must be positive");
  return v;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "input_width") encoder.input_width = positive(key, parse_int(key, value));
  else if (key == "input_height") encoder.input_height = positive(key, parse_int(key, value));
  else if (key == "backbone_channels") {
    encoder.backbone_channels.clear();
    for (std::int64_t c : parse_list<std::int64_t>(key, value, parse_int))
      encoder.backbone_channels.push_back(static_cast<Index>(positive(key, c)));
  } else if (key == "K") encoder.clusters = positive(key, parse_int(key, value));
  else if (key == "D") encoder.local_dim = positive(key, parse_int(key, value));
  else if (key == "cls_dim") encoder.cls_dim = positive(key, parse_int(key, value));
  else if (key == "cbp_dim") encoder.cbp_dim = positive(key, parse_int(key, value));
  else if (key == "cls_hidden") {
    encoder.cls_hidden.clear();
    for (std::int64_t c : parse_list<std::int64_t>(key, value, parse_int))
      encoder.cls_hidden.push_back(static_cast<Index>(positive(key, c)));
  } else if (key == "alpha") train.alpha = positive(key, parse_real(key, value));
  else if (key == "lr") train.lr = parse_real(key, value);
  else if (key == "epochs") train.epochs = static_cast<int>(positive(key, parse_int(key, value)));
  else if (key == "batch") train.batch = static_cast<int>(positive(key, parse_int(key, value)));
  else if (key == "pos_radius_m") train.pos_radius_m = positive(key, parse_real(key, value));
  else if (key == "neg_radius_m") train.neg_radius_m = positive(key, parse_real(key, value));
  else if (key == "kmeans_warmup") train.kmeans_warmup = parse_int(key, value) != 0;
  else if (key == "seed") set_seed(static_cast<std::uint64_t>(parse_int(key, value)));
  else if (key == "delta_t_us") delta_t_us = positive(key, parse_int(key, value));
  else if (key == "d_max") frame.d_max = positive(key, parse_real(key, value));
  else if (key == "denoise_radius")
    frame.denoise_radius = static_cast<int>(positive(key, parse_int(key, value)));
  else if (key == "denoise_min_neighbors")
    frame.denoise_min_neighbors = static_cast<int>(positive(key, parse_int(key, value)));
  else if (key == "topn") top_n = static_cast<int>(positive(key, parse_int(key, value)));
  else if (key == "threads") threads = static_cast<int>(positive(key, parse_int(key, value)));
  else if (key == "radius_m") radius_m = positive(key, parse_real(key, value));
  else if (key == "recall_ns") {
    recall_ns.clear();
    for (std::int64_t n : parse_list<std::int64_t>(key, value, parse_int))
      recall_ns.push_back(static_cast<int>(positive(key, n)));
  } else if (key == "train_frac") fractions.train = positive(key, parse_real(key, value));
  else if (key == "val_frac") fractions.val = positive(key, parse_real(key, value));
  else if (key == "test_frac") fractions.test = positive(key, parse_real(key, value));
  else if (key == "places") synth_places = static_cast<int>(positive(key, parse_int(key, value)));
  else if (key == "scenarios") {
    scenarios.clear();
    std::istringstream in(value);
    std::string item;
    while (std::getline(in, item, ','))
      if (!item.empty()) scenarios.push_back(item);
    if (scenarios.empty()) throw UsageError("config: key 'scenarios' expects a list");
  } else {
    throw UsageError("config: unknown key '" + key + "'");
  }
}

void RunConfig::set_seed(std::uint64_t s) {
  seed = s;
  encoder.seed = s;
  train.seed = s;
}

void RunConfig::validate() const {
  encoder.validate();
  train.validate();
  if (frame.d_max <= 0.0 || frame.denoise_radius < 1 || frame.denoise_min_neighbors < 1)
    throw UsageError("config: frame options out of range");
  if (top_n < 1 || threads < 1 || radius_m <= 0.0 || delta_t_us <= 0)
    throw UsageError("config: topn/threads/radius_m/delta_t_us out of range");
  for (int n : recall_ns)
    if (n < 1) throw UsageError("config: recall_ns values must be >= 1");
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file: " + path);
  RunConfig cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError(path + ":" + std::to_string(line_no) + ": expected key=value");
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    const auto key_end = key.find_last_not_of(" \t");
    key = key.substr(0, key_end == std::string::npos ? 0 : key_end + 1);
    const auto val_begin = value.find_first_not_of(" \t");
    value = val_begin == std::string::npos ? "" : value.substr(val_begin);
    cfg.set(key, value);
  }
  return cfg;
}

}  // namespace xvpr
