#pragma once

#include <sstream>
#include <string>

#include "dunet/config.hpp"
#include "dunet/param_store.hpp"
#include "dunet/serialize.hpp"

namespace dunet {

struct DataConfig {
  int size = 64;
  int classes = 2;
  int n = 8;
  uint64_t seed = 7;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::vector<int> parse_int_list(const std::string& v,
                                       const std::string& key) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (tok.empty()) continue;
    try {
      out.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw ConfigError("invalid integer list for key " + key + ": " + v);
    }
  }
  if (out.empty()) throw ConfigError("empty list for key " + key);
  return out;
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("invalid boolean for key " + key + ": " + v);
}

inline std::string join_ints(const std::vector<int>& v) {
  std::ostringstream os;
  for (size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

}  // namespace detail

inline void apply_variant(ModelConfig& m, const std::string& variant) {
  int d;
  if (variant == "desk") d = 32;
  else if (variant == "S") d = 384;
  else if (variant == "B") d = 768;
  else if (variant == "L") d = 1024;
  else if (variant == "7B") d = 4096;
  else throw ConfigError("unknown variant: " + variant);
  m.variant = variant;
  m.backbone.embed_dim = d;
  m.adapter.channels = d;
  m.fapm.in_dim = d;
  if (variant != "desk") m.fapm.rank = 256;
}

// key=value sections [model], [train], [data]; unknown keys rejected.
inline RunConfig parse_run_config(std::istream& is) {
  RunConfig rc;
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[' && line.back() == ']') {
      section = line.substr(1, line.size() - 2);
      if (section != "model" && section != "train" && section != "data")
        throw ConfigError("unknown section [" + section + "]");
      continue;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) +
                        ": expected key=value, got: " + line);
    std::string key = detail::trim(line.substr(0, eq));
    std::string val = detail::trim(line.substr(eq + 1));
    auto as_int = [&] {
      try {
        return std::stoll(val);
      } catch (const std::exception&) {
        throw ConfigError("invalid integer for key " + key + ": " + val);
      }
    };
    auto as_double = [&] {
      try {
        return std::stod(val);
      } catch (const std::exception&) {
        throw ConfigError("invalid number for key " + key + ": " + val);
      }
    };
    if (section == "model") {
      auto& m = rc.model;
      if (key == "variant") apply_variant(m, val);
      else if (key == "seed") m.seed = static_cast<uint64_t>(as_int());
      else if (key == "embed_dim") {
        m.backbone.embed_dim = static_cast<int>(as_int());
        m.adapter.channels = m.backbone.embed_dim;
        m.fapm.in_dim = m.backbone.embed_dim;
      } else if (key == "depth") m.backbone.depth = static_cast<int>(as_int());
      else if (key == "num_heads")
        m.backbone.num_heads = static_cast<int>(as_int());
      else if (key == "patch_size")
        m.backbone.patch_size = static_cast<int>(as_int());
      else if (key == "pos_grid")
        m.backbone.pos_grid = static_cast<int>(as_int());
      else if (key == "mlp_ratio")
        m.backbone.mlp_ratio = static_cast<int>(as_int());
      else if (key == "tap_layers")
        m.backbone.tap_layers = detail::parse_int_list(val, key);
      else if (key == "pyramid_strides") {
        m.adapter.pyramid_strides = detail::parse_int_list(val, key);
        m.adapter.num_scales =
            static_cast<int>(m.adapter.pyramid_strides.size());
      } else if (key == "num_points")
        m.adapter.num_points = static_cast<int>(as_int());
      else if (key == "attn_heads")
        m.adapter.num_heads = static_cast<int>(as_int());
      else if (key == "interaction_residual")
        m.adapter.interaction_residual = detail::parse_bool(val, key);
      else if (key == "rank") m.fapm.rank = static_cast<int>(as_int());
      else if (key == "out_dims") {
        m.fapm.out_dims = detail::parse_int_list(val, key);
        m.decoder.skip_dims = m.fapm.out_dims;
      } else if (key == "se_reduction")
        m.fapm.se_reduction = static_cast<int>(as_int());
      else if (key == "dw_kernel")
        m.fapm.dw_kernel = static_cast<int>(as_int());
      else if (key == "num_classes")
        m.decoder.num_classes = static_cast<int>(as_int());
      else if (key == "use_fapm_baseline")
        m.use_fapm_baseline = detail::parse_bool(val, key);
      else
        throw ConfigError("unknown key in [model]: " + key);
    } else if (section == "train") {
      auto& t = rc.train;
      if (key == "lr0") t.lr0 = as_double();
      else if (key == "beta1") t.beta1 = as_double();
      else if (key == "beta2") t.beta2 = as_double();
      else if (key == "adam_eps") t.adam_eps = as_double();
      else if (key == "epochs") t.epochs = static_cast<int>(as_int());
      else if (key == "steps_per_epoch")
        t.steps_per_epoch = static_cast<int>(as_int());
      else if (key == "poly_power") t.poly_power = as_double();
      else if (key == "batch_size") t.batch_size = static_cast<int>(as_int());
      else if (key == "dtype") {
        if (val != "f64" && val != "f32")
          throw ConfigError("dtype must be f64 or f32, got: " + val);
        t.dtype = val;
      } else
        throw ConfigError("unknown key in [train]: " + key);
    } else if (section == "data") {
      auto& d = rc.data;
      if (key == "size") d.size = static_cast<int>(as_int());
      else if (key == "classes") d.classes = static_cast<int>(as_int());
      else if (key == "n") d.n = static_cast<int>(as_int());
      else if (key == "seed") d.seed = static_cast<uint64_t>(as_int());
      else
        throw ConfigError("unknown key in [data]: " + key);
    } else {
      throw ConfigError("key outside any section: " + key);
    }
  }
  // derived invariants
  if (static_cast<int>(rc.model.backbone.tap_layers.size()) !=
      rc.model.adapter.num_scales) {
    // default taps: evenly spaced over depth, last = depth
    const int n = rc.model.adapter.num_scales;
    const int L = rc.model.backbone.depth;
    rc.model.backbone.tap_layers.clear();
    for (int i = 1; i <= n; ++i)
      rc.model.backbone.tap_layers.push_back(
          std::max(1, (i * L + n - 1) / n));
  }
  return rc;
}

inline RunConfig parse_run_config(const std::string& text) {
  std::istringstream is(text);
  return parse_run_config(is);
}

inline std::string run_config_text(const RunConfig& rc) {
  std::ostringstream os;
  os.precision(17);
  const auto& m = rc.model;
  os << "[model]\n"
     << "variant = " << m.variant << "\n"
     << "seed = " << m.seed << "\n"
     << "embed_dim = " << m.backbone.embed_dim << "\n"
     << "depth = " << m.backbone.depth << "\n"
     << "num_heads = " << m.backbone.num_heads << "\n"
     << "patch_size = " << m.backbone.patch_size << "\n"
     << "pos_grid = " << m.backbone.pos_grid << "\n"
     << "mlp_ratio = " << m.backbone.mlp_ratio << "\n"
     << "tap_layers = " << detail::join_ints(m.backbone.tap_layers) << "\n"
     << "pyramid_strides = " << detail::join_ints(m.adapter.pyramid_strides)
     << "\n"
     << "num_points = " << m.adapter.num_points << "\n"
     << "attn_heads = " << m.adapter.num_heads << "\n"
     << "interaction_residual = "
     << (m.adapter.interaction_residual ? "true" : "false") << "\n"
     << "rank = " << m.fapm.rank << "\n"
     << "out_dims = " << detail::join_ints(m.fapm.out_dims) << "\n"
     << "se_reduction = " << m.fapm.se_reduction << "\n"
     << "dw_kernel = " << m.fapm.dw_kernel << "\n"
     << "num_classes = " << m.decoder.num_classes << "\n"
     << "use_fapm_baseline = " << (m.use_fapm_baseline ? "true" : "false")
     << "\n\n";
  const auto& t = rc.train;
  os << "[train]\n"
     << "lr0 = " << t.lr0 << "\n"
     << "beta1 = " << t.beta1 << "\n"
     << "beta2 = " << t.beta2 << "\n"
     << "adam_eps = " << t.adam_eps << "\n"
     << "epochs = " << t.epochs << "\n"
     << "steps_per_epoch = " << t.steps_per_epoch << "\n"
     << "poly_power = " << t.poly_power << "\n"
     << "batch_size = " << t.batch_size << "\n"
     << "dtype = " << t.dtype << "\n\n";
  const auto& d = rc.data;
  os << "[data]\n"
     << "size = " << d.size << "\n"
     << "classes = " << d.classes << "\n"
     << "n = " << d.n << "\n"
     << "seed = " << d.seed << "\n";
  return os.str();
}

// Checkpoint = parameter container + the resolved config as a u8 entry.
template <typename T>
void save_checkpoint(const ParamStore<T>& store, const RunConfig& rc,
                     const std::string& path) {
  Container c = store.to_container();
  std::string cfg = run_config_text(rc);
  std::vector<uint8_t> bytes(cfg.begin(), cfg.end());
  c.emplace("__config__",
            ContainerEntry::from(Shape{static_cast<int64_t>(bytes.size())},
                                 bytes, false));
  save_container(c, path);
}

inline RunConfig checkpoint_config(const Container& c) {
  auto it = c.find("__config__");
  require(it != c.end(), "checkpoint has no embedded config");
  auto bytes = it->second.as<uint8_t>();
  return parse_run_config(std::string(bytes.begin(), bytes.end()));
}

}  // namespace dunet
