#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cmir/errors.hpp"
#include "cmir/keyvalue.hpp"
#include "cmir/scm.hpp"

// Dataset directory layout:
//   <dir>/<split>.txt     header line, then one record per sample:
//                         env label x_1[0..d) x_2[0..d) ... (float64, %25.16e)
//   <dir>/<split>.latent  header line, then c[0..dc) s[0..ds) per sample
// Header: "#cmir-dataset version=1 split=<name> n=<N>" followed by the
// scm.* config echo. Splits: train, val, test_id, test_ood.

namespace cmir {

inline constexpr int kDatasetVersion = 1;

namespace detail {

inline void write_field(std::ostream& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, " %25.16e", v);
  out << buf;
}

inline std::string dataset_header(const ScmConfig& c, const Split& sp, const char* kind) {
  kv::Record r{{"version", std::to_string(kDatasetVersion)}, {"split", sp.name},
               {"n", std::to_string(sp.size())}};
  for (auto& kvp : to_record(c)) r.push_back(kvp);
  return std::string("#") + kind + " " + kv::format_inline(r);
}

inline ScmConfig read_header(std::istream& in, const std::string& path, std::string& split,
                             std::size_t& n) {
  std::string line;
  if (!std::getline(in, line) || line.empty() || line[0] != '#') {
    throw LoadError("'" + path + "': missing dataset header");
  }
  const auto space = line.find(' ');
  if (space == std::string::npos) throw LoadError("'" + path + "': malformed header");
  ScmConfig c;
  bool versioned = false;
  for (auto& [k, v] : kv::parse_inline(std::string_view(line).substr(space + 1))) {
    if (k == "version") {
      if (v != std::to_string(kDatasetVersion)) throw LoadError("'" + path + "': unsupported version " + v);
      versioned = true;
    } else if (k == "split") {
      split = v;
    } else if (k == "n") {
      n = kv::parse_uint(k, v);
    } else if (!apply_key(c, k, v)) {
      throw LoadError("'" + path + "': unknown header key '" + k + "'");
    }
  }
  if (!versioned) throw LoadError("'" + path + "': header has no version");
  return c;
}

}  // namespace detail

inline void write_split(const std::filesystem::path& dir, const ScmConfig& c, const Split& sp) {
  std::ofstream out(dir / (sp.name + ".txt"));
  std::ofstream lat(dir / (sp.name + ".latent"));
  if (!out || !lat) throw Error("cannot write dataset files in '" + dir.string() + "'");
  out << detail::dataset_header(c, sp, "cmir-dataset") << '\n';
  lat << detail::dataset_header(c, sp, "cmir-latent") << '\n';
  for (std::size_t i = 0; i < sp.size(); ++i) {
    out << sp.envs[i];
    detail::write_field(out, sp.labels[i]);
    for (const Tensor& x : sp.modalities)
      for (std::size_t j = 0; j < x.cols(); ++j) detail::write_field(out, x(i, j));
    out << '\n';
    for (std::size_t j = 0; j < sp.latent_causal.cols(); ++j) detail::write_field(lat, sp.latent_causal(i, j));
    for (std::size_t j = 0; j < sp.latent_spurious.cols(); ++j) detail::write_field(lat, sp.latent_spurious(i, j));
    lat << '\n';
  }
}

inline void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  for (const Split* sp : ds.splits()) write_split(dir, ds.config, *sp);
}

/// Reads one split. Latents are loaded only when `with_latents` is set.
inline Split read_split(const std::filesystem::path& dir, const std::string& name, ScmConfig* config_out,
                        bool with_latents = false) {
  const std::string path = (dir / (name + ".txt")).string();
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open '" + path + "'");
  std::string split;
  std::size_t n = 0;
  const ScmConfig c = detail::read_header(in, path, split, n);
  Split sp;
  sp.name = split;
  for (std::size_t m = 0; m < c.modalities; ++m) sp.modalities.emplace_back(n, c.feature_dim);
  sp.labels.resize(n);
  sp.envs.resize(n);
  sp.env_gamma.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(in >> sp.envs[i] >> sp.labels[i])) throw LoadError("'" + path + "': truncated at sample " + std::to_string(i));
    for (Tensor& x : sp.modalities)
      for (std::size_t j = 0; j < x.cols(); ++j)
        if (!(in >> x(i, j))) throw LoadError("'" + path + "': truncated at sample " + std::to_string(i));
    sp.env_gamma[i] = sp.envs[i] < c.env_count() ? c.gamma[sp.envs[i]] : c.gamma_test;
  }
  sp.latent_causal = Tensor(n, c.causal_dim);
  sp.latent_spurious = Tensor(n, c.spurious_dim);
  if (with_latents) {
    const std::string lpath = (dir / (name + ".latent")).string();
    std::ifstream lin(lpath);
    if (!lin) throw LoadError("cannot open '" + lpath + "'");
    std::string lsplit;
    std::size_t ln = 0;
    detail::read_header(lin, lpath, lsplit, ln);
    if (ln != n) throw LoadError("'" + lpath + "': sample count differs from features");
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < c.causal_dim; ++j)
        if (!(lin >> sp.latent_causal(i, j))) throw LoadError("'" + lpath + "': truncated");
      for (std::size_t j = 0; j < c.spurious_dim; ++j)
        if (!(lin >> sp.latent_spurious(i, j))) throw LoadError("'" + lpath + "': truncated");
    }
  }
  if (config_out) *config_out = c;
  return sp;
}

inline Dataset read_dataset(const std::filesystem::path& dir, bool with_latents = false) {
  Dataset ds;
  ds.train = read_split(dir, "train", &ds.config, with_latents);
  ds.val = read_split(dir, "val", nullptr, with_latents);
  ds.test_id = read_split(dir, "test_id", nullptr, with_latents);
  ds.test_ood = read_split(dir, "test_ood", nullptr, with_latents);
  return ds;
}

}  // namespace cmir
