#pragma once

#include <cctype>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "parametrix/perturb.hpp"

namespace parametrix {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Run configuration. Files are JSON or a small TOML subset (flat tables,
// dotted keys, strings, numbers, booleans, nested arrays, # comments); TOML
// input is normalized to JSON so the rest of the pipeline sees one schema.
// A run is a pure function of its RunConfig.
// ---------------------------------------------------------------------------

namespace toml_detail {

inline void skip_ws(std::string_view s, std::size_t& i) {
  while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
}

inline json parse_value(std::string_view s, std::size_t& i);

inline json parse_array(std::string_view s, std::size_t& i) {
  json arr = json::array();
  ++i;  // [
  for (;;) {
    while (i < s.size() &&
           (s[i] == ' ' || s[i] == '\t' || s[i] == '\n' || s[i] == '\r'))
      ++i;
    if (i >= s.size()) throw config_error("toml: unterminated array");
    if (s[i] == ']') {
      ++i;
      return arr;
    }
    arr.push_back(parse_value(s, i));
    while (i < s.size() &&
           (s[i] == ' ' || s[i] == '\t' || s[i] == '\n' || s[i] == '\r'))
      ++i;
    if (i < s.size() && s[i] == ',') ++i;
  }
}

inline json parse_value(std::string_view s, std::size_t& i) {
  skip_ws(s, i);
  if (i >= s.size()) throw config_error("toml: missing value");
  const char c = s[i];
  if (c == '[') return parse_array(s, i);
  if (c == '"' || c == '\'') {
    const char quote = c;
    std::string out;
    ++i;
    while (i < s.size() && s[i] != quote) {
      if (s[i] == '\\' && quote == '"' && i + 1 < s.size()) {
        ++i;
        switch (s[i]) {
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          default: out += s[i];
        }
      } else {
        out += s[i];
      }
      ++i;
    }
    if (i >= s.size()) throw config_error("toml: unterminated string");
    ++i;
    return json(out);
  }
  std::size_t end = i;
  while (end < s.size() && s[end] != ',' && s[end] != ']' && s[end] != '#' &&
         s[end] != '\n' && s[end] != '\r')
    ++end;
  std::string tok(s.substr(i, end - i));
  while (!tok.empty() && (tok.back() == ' ' || tok.back() == '\t')) tok.pop_back();
  i = end;
  if (tok == "true") return json(true);
  if (tok == "false") return json(false);
  try {
    std::size_t used = 0;
    if (tok.find_first_of(".eE") == std::string::npos &&
        tok.find("inf") == std::string::npos) {
      const long long v = std::stoll(tok, &used);
      if (used == tok.size()) return json(v);
    }
    const double v = std::stod(tok, &used);
    if (used == tok.size()) return json(v);
  } catch (const std::exception&) {
  }
  throw config_error("toml: cannot parse value '" + tok + "'");
}

inline json* descend(json& root, const std::string& dotted) {
  json* cur = &root;
  std::size_t start = 0;
  for (;;) {
    const std::size_t dot = dotted.find('.', start);
    const std::string key = dotted.substr(start, dot - start);
    if (dot == std::string::npos) {
      return &(*cur)[key];
    }
    cur = &(*cur)[key];
    start = dot + 1;
  }
}

}  // namespace toml_detail

inline json parse_toml_subset(const std::string& text) {
  json root = json::object();
  std::string table;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::size_t i = 0;
    toml_detail::skip_ws(line, i);
    if (i >= line.size() || line[i] == '#') continue;
    if (line[i] == '[') {
      const std::size_t close = line.find(']', i);
      if (close == std::string::npos) throw config_error("toml: bad table header");
      table = line.substr(i + 1, close - i - 1);
      continue;
    }
    const std::size_t eq = line.find('=', i);
    if (eq == std::string::npos) throw config_error("toml: expected key = value");
    std::string key = line.substr(i, eq - i);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
    std::size_t vi = eq + 1;
    std::string_view lv(line);
    const json value = toml_detail::parse_value(lv, vi);
    const std::string full = table.empty() ? key : table + "." + key;
    *toml_detail::descend(root, full) = value;
  }
  return root;
}

inline json load_config_text(const std::string& text) {
  try {
    for (char c : text) {
      if (std::isspace(static_cast<unsigned char>(c))) continue;
      if (c == '{') return json::parse(text);
      break;
    }
    return parse_toml_subset(text);
  } catch (const json::exception& e) {
    throw config_error(std::string("config parse error: ") + e.what());
  }
}

inline json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return load_config_text(ss.str());
  } catch (const json::exception& e) {
    throw config_error(std::string("config parse error: ") + e.what());
  }
}

inline std::string config_hash(const json& cfg) {
  const std::uint64_t h = fnv1a64(cfg.dump());
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Model construction from a config document.
// ---------------------------------------------------------------------------

inline QuadConfig quad_from_config(const json& cfg) {
  QuadConfig q;
  if (!cfg.contains("quad")) return q;
  const json& j = cfg.at("quad");
  if (j.contains("n_time")) q.n_time = j.at("n_time").get<int>();
  if (j.contains("n_space")) q.n_space = j.at("n_space").get<int>();
  if (j.contains("n_mc")) q.n_mc = j.at("n_mc").get<int>();
  if (j.contains("space_radius")) q.space_radius = j.at("space_radius").get<double>();
  if (j.contains("singularity_power"))
    q.singularity_power = j.at("singularity_power").get<double>();
  if (j.contains("seed")) q.seed = j.at("seed").get<std::uint64_t>();
  q.validate();
  return q;
}

inline DiffusionSpec spec_from_config(const json& cfg) {
  try {
    if (cfg.contains("model")) {
      const json& m = cfg.at("model");
      std::map<std::string, double> params;
      if (m.contains("params"))
        for (const auto& [k, v] : m.at("params").items())
          params[k] = v.get<double>();
      return builtin_model(m.at("name").get<std::string>(), params).base;
    }
    if (cfg.contains("expressions")) {
      const json& e = cfg.at("expressions");
      return make_spec_from_expressions(
          e.at("d").get<int>(),
          e.at("drift").get<std::vector<std::string>>(),
          e.at("sigma").get<std::vector<std::vector<std::string>>>(),
          e.value("gamma", 1.0), e.value("lipschitz_K", 1.0),
          e.value("ellipticity_Lambda", 1.0), e.value("horizon_T", 1.0));
    }
  } catch (const json::exception& e) {
    throw config_error(std::string("bad model config: ") + e.what());
  }
  throw config_error("config needs a 'model' or 'expressions' section");
}

inline PerturbationPair pair_from_config(const json& cfg) {
  try {
    if (!cfg.contains("pair"))
      throw config_error("config needs a 'pair' section");
    const json& p = cfg.at("pair");
    const std::string name = p.value("name", "oscillating");
    PerturbationPair pair;
    if (name == "oscillating" || name == "oscillating_pair") {
      pair = make_oscillating_pair(p.at("eps").get<double>(),
                                   p.at("q").get<double>(),
                                   p.value("sigma", 1.0), p.value("T", 1.0));
    } else {
      throw unknown_model("unknown pair '" + name + "'");
    }
    if (p.contains("delta")) pair.delta = p.at("delta").get<double>();
    if (p.contains("alpha") && p.at("alpha").get<double>() > 0.0)
      pair.alpha = p.at("alpha").get<double>();
    if (p.contains("mu")) {
      pair.mu.clear();
      for (const auto& atom : p.at("mu")) {
        MuAtom a;
        const auto xs = atom.at("x").get<std::vector<double>>();
        a.x = Vec(xs.size());
        for (std::size_t i = 0; i < xs.size(); ++i) a.x(i) = xs[i];
        a.w = atom.at("w").get<double>();
        pair.mu.push_back(std::move(a));
      }
    }
    pair.validate();
    return pair;
  } catch (const json::exception& e) {
    throw config_error(std::string("bad pair config: ") + e.what());
  }
}

}  // namespace parametrix
