#include "vlt/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace vlt {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const std::int64_t r = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer for '" + key + "': " + v);
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config: bad number for '" + key + "': " + v);
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: bad boolean for '" + key + "': " + v);
}

}  // namespace

void Config::validate() const {
  if (d_model < 1 || d_state < 1 || d_inner_ratio < 1 || n_modules < 1 ||
      window < 1 || conv_width < 1 || conv_width % 2 == 0)
    throw ConfigError("config: invalid model dimensions");
  if (image_size % patch != 0 || template_size % patch != 0 ||
      search_size % patch != 0)
    throw ConfigError("config: sizes must be divisible by patch");
  if (clip_len < 1) throw ConfigError("config: clip_len must be >= 1");
  if (conf_threshold < 0 || conf_threshold > 1)
    throw ConfigError("config: conf_threshold out of [0,1]");
  if (batch < 1 || epochs < 0 || train_sequences < 0 || unroll < 1)
    throw ConfigError("config: invalid training schedule");
  if (lr <= 0 || weight_decay < 0)
    throw ConfigError("config: invalid optimizer settings");
}

Config parse_config_text(const std::string& text) {
  Config c;
  std::map<std::string, std::function<void(const std::string&)>> setters;
  auto i64 = [&](const char* k, std::int64_t* dst) {
    setters[k] = [k, dst](const std::string& v) { *dst = parse_int(k, v); };
  };
  auto f64 = [&](const char* k, double* dst) {
    setters[k] = [k, dst](const std::string& v) { *dst = parse_double(k, v); };
  };
  auto b = [&](const char* k, bool* dst) {
    setters[k] = [k, dst](const std::string& v) { *dst = parse_bool(k, v); };
  };
  i64("d_model", &c.d_model);
  i64("d_state", &c.d_state);
  i64("d_inner_ratio", &c.d_inner_ratio);
  i64("n_modules", &c.n_modules);
  i64("window", &c.window);
  i64("conv_width", &c.conv_width);
  i64("box_hidden", &c.box_hidden);
  i64("n_lang_select", &c.n_lang_select);
  b("segment_masked_window", &c.segment_masked_window);
  f64("tau", &c.tau);
  f64("tau_c", &c.tau_c);
  i64("image_size", &c.image_size);
  i64("patch", &c.patch);
  i64("template_size", &c.template_size);
  i64("search_size", &c.search_size);
  f64("template_scale", &c.template_scale);
  f64("search_scale", &c.search_scale);
  i64("clip_len", &c.clip_len);
  f64("conf_threshold", &c.conf_threshold);
  b("srf_update_templates", &c.srf_update_templates);
  i64("seq_len", &c.seq_len);
  i64("distractors", &c.distractors);
  b("hard_distractors", &c.hard_distractors);
  f64("lr", &c.lr);
  f64("weight_decay", &c.weight_decay);
  i64("batch", &c.batch);
  i64("epochs", &c.epochs);
  i64("train_sequences", &c.train_sequences);
  i64("eval_sequences", &c.eval_sequences);
  i64("unroll", &c.unroll);
  f64("lambda_l1", &c.lambda_l1);
  f64("lambda_giou", &c.lambda_giou);
  f64("lambda_tgt", &c.lambda_tgt);
  f64("lambda_cls", &c.lambda_cls);
  f64("lambda_cw", &c.lambda_cw);
  f64("lambda_co", &c.lambda_co);
  i64("intra_negatives", &c.intra_negatives);

  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end())
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": unknown key '" + key + "'");
    it->second(value);
  }
  c.validate();
  return c;
}

Config load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

}  // namespace vlt
