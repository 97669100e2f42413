#pragma once

// Flat TOML-style run configuration: `key = value` lines with #-comments,
// numbers, booleans, quoted strings and numeric arrays. Section headers are
// accepted and ignored (keys are global).

#include <caw/core.hpp>
#include <caw/normal_form.hpp>

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace caw {

using TomlValue = std::variant<double, bool, std::string, std::vector<double>>;

inline std::string strip(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline TomlValue parse_toml_value(const std::string& raw) {
  const std::string v = strip(raw);
  if (v.empty()) throw CawError("config: empty value");
  if (v.front() == '"') {
    const auto end = v.find('"', 1);
    if (end == std::string::npos) throw CawError("config: unterminated string");
    return v.substr(1, end - 1);
  }
  if (v == "true") return true;
  if (v == "false") return false;
  if (v.front() == '[') {
    if (v.back() != ']') throw CawError("config: unterminated array");
    std::vector<double> arr;
    std::stringstream ss(v.substr(1, v.size() - 2));
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      tok = strip(tok);
      if (!tok.empty()) arr.push_back(std::stod(tok));
    }
    return arr;
  }
  return std::stod(v);
}

inline std::map<std::string, TomlValue> parse_toml(const std::string& text) {
  std::map<std::string, TomlValue> out;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    // strip comments outside strings
    bool in_str = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') in_str = !in_str;
      if (line[i] == '#' && !in_str) {
        line = line.substr(0, i);
        break;
      }
    }
    line = strip(line);
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') continue;  // section header
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw CawError("config: bad line " + std::to_string(lineno) + ": " + line);
    out[strip(line.substr(0, eq))] = parse_toml_value(line.substr(eq + 1));
  }
  return out;
}

inline std::map<std::string, TomlValue> parse_toml_file(const std::string& path,
                                                        std::string* raw_out = nullptr) {
  std::ifstream in(path);
  if (!in) throw CawError("config: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  if (raw_out) *raw_out = buf.str();
  return parse_toml(buf.str());
}

struct RunConfig {
  ModelParams model;
  // schedule keys
  long leaves = 10;
  double eta = 1.0;
  double slack_floor = 0.05;
  double hat_gamma_floor = 0.5;
  int beam_width = 4;
  int depth = 60;
  double tol = 1e-9;
  double drift_target = 0.9;
  double spacing_scale = 0.1;
  // sweep keys
  std::vector<double> epsilon_list;
  // extended run keys
  bool extended = false;
  double a_star = 0.01;
  int K_cap = 4;
  // shear-audit keys
  long audit_N = 100;
  double audit_gamma = 0.1;
  double audit_delta = 0.01;
  double audit_p0 = 0.45;
  int alignment_samples = 4;

  std::string raw;  // original file contents, hashed into the manifest
};

inline RunConfig load_run_config(const std::string& path) {
  RunConfig c;
  auto kv = parse_toml_file(path, &c.raw);
  const auto get_num = [&](const std::string& key) -> double {
    const auto it = kv.find(key);
    if (it == kv.end()) throw CawError("config: missing mandatory key '" + key + "'");
    if (const double* d = std::get_if<double>(&it->second)) return *d;
    throw CawError("config: key '" + key + "' must be a number");
  };
  const auto opt_num = [&](const std::string& key, double dflt) -> double {
    const auto it = kv.find(key);
    if (it == kv.end()) return dflt;
    if (const double* d = std::get_if<double>(&it->second)) return *d;
    throw CawError("config: key '" + key + "' must be a number");
  };
  const auto opt_arr = [&](const std::string& key) -> std::vector<double> {
    const auto it = kv.find(key);
    if (it == kv.end()) return {};
    if (const auto* a = std::get_if<std::vector<double>>(&it->second)) return *a;
    throw CawError("config: key '" + key + "' must be an array");
  };

  ModelParams& m = c.model;
  m.epsilon = get_num("epsilon");
  m.sigma = get_num("sigma");
  m.tau = get_num("tau");
  m.upsilon = get_num("upsilon");
  m.k = static_cast<int>(get_num("k"));
  m.n = static_cast<Index>(get_num("n"));
  m.m = static_cast<Index>(get_num("m"));
  m.lambda_minus = get_num("lambda_minus");
  m.lambda_plus = get_num("lambda_plus");
  m.mu_minus = get_num("mu_minus");
  m.mu_plus = get_num("mu_plus");
  m.T_minus = get_num("T_minus");
  m.T_plus = get_num("T_plus");
  m.C = get_num("C");
  m.R = get_num("R");
  m.R_prime = get_num("R_prime");
  m.delta_s = get_num("delta_s");
  m.delta_u = get_num("delta_u");
  m.N_plus = static_cast<long>(get_num("N_plus"));
  m.N_minus = static_cast<long>(get_num("N_minus"));
  m.nu = get_num("nu");
  m.nu_prime = get_num("nu_prime");
  m.omega_prime = get_num("omega_prime");
  m.seed = static_cast<std::uint64_t>(get_num("seed"));
  // extended-system keys are the only optional model keys
  m.L = static_cast<int>(opt_num("L", m.L));
  m.ell1 = static_cast<Index>(opt_num("ell1", static_cast<double>(m.ell1)));
  m.ell2 = static_cast<Index>(opt_num("ell2", static_cast<double>(m.ell2)));
  m.C_ext = opt_num("C_ext", m.C_ext);
  m.nonlinear_a = opt_num("nonlinear_a", 0.0);
  {
    const auto xs = opt_arr("xi_star");
    if (!xs.empty()) {
      m.xi_star = Vec(static_cast<Index>(xs.size()));
      for (std::size_t i = 0; i < xs.size(); ++i) m.xi_star[static_cast<Index>(i)] = xs[i];
    }
  }

  c.leaves = static_cast<long>(opt_num("leaves", static_cast<double>(c.leaves)));
  c.eta = opt_num("eta", c.eta);
  c.slack_floor = opt_num("slack_floor", c.slack_floor);
  c.hat_gamma_floor = opt_num("hat_gamma_floor", c.hat_gamma_floor);
  c.beam_width = static_cast<int>(opt_num("beam_width", c.beam_width));
  c.depth = static_cast<int>(opt_num("depth", c.depth));
  c.tol = opt_num("tol", c.tol);
  c.drift_target = opt_num("drift_target", c.drift_target);
  c.spacing_scale = opt_num("spacing_scale", c.spacing_scale);
  c.epsilon_list = opt_arr("epsilon_list");
  c.extended = [&] {
    const auto it = kv.find("extended");
    if (it == kv.end()) return false;
    if (const bool* b = std::get_if<bool>(&it->second)) return *b;
    throw CawError("config: key 'extended' must be a boolean");
  }();
  c.a_star = opt_num("a_star", c.a_star);
  c.K_cap = static_cast<int>(opt_num("K_cap", c.K_cap));
  c.audit_N = static_cast<long>(opt_num("audit_N", static_cast<double>(c.audit_N)));
  c.audit_gamma = opt_num("audit_gamma", c.audit_gamma);
  c.audit_delta = opt_num("audit_delta", c.audit_delta);
  c.audit_p0 = opt_num("audit_p0", c.audit_p0);
  c.alignment_samples = static_cast<int>(opt_num("alignment_samples", c.alignment_samples));

  // invariants
  if (m.sigma < 0 || m.tau < 0 || m.upsilon < 0 || m.k < 0)
    throw CawError("config: order parameters must be nonnegative");
  if (!(m.epsilon > 0.0) || m.epsilon > 0.5)
    throw CawError("config: epsilon must lie in (0, 0.5]");
  if (!(c.eta > 0.0)) throw CawError("config: eta must be positive");
  return c;
}

}  // namespace caw
