#pragma once

// Experiment configuration: a JSON document with nested tables, plus scalar
// overrides from the command line. Errors carry the file name, the line of
// the offending value, and its JSON pointer.

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dda/analysis.hpp"
#include "dda/errors.hpp"

namespace dda {

using Json = nlohmann::json;

namespace detail {

/// Maps JSON pointers to the 1-based line where their value starts. Only
/// meaningful for text that already parsed successfully.
class LineIndex {
public:
  explicit LineIndex(const std::string& text) { scan(text); }

  [[nodiscard]] std::optional<int> line_of(const std::string& pointer) const {
    std::string p = pointer;
    for (;;) {
      auto it = lines_.find(p);
      if (it != lines_.end()) return it->second;
      if (p.empty()) return std::nullopt;
      const auto cut = p.rfind('/');
      p = cut == std::string::npos ? std::string() : p.substr(0, cut);
    }
  }

private:
  struct Frame {
    bool object = false;
    std::string base;
    std::string key;
    int index = 0;
  };

  static std::string escape(const std::string& key) {
    std::string out;
    for (char ch : key) {
      if (ch == '~') out += "~0";
      else if (ch == '/') out += "~1";
      else out += ch;
    }
    return out;
  }

  std::string current(const std::vector<Frame>& stack) const {
    if (stack.empty()) return "";
    const Frame& f = stack.back();
    return f.base + "/" + (f.object ? escape(f.key) : std::to_string(f.index));
  }

  void scan(const std::string& s) {
    std::vector<Frame> stack;
    int line = 1;
    bool expect_key = false;
    auto mark_value = [&]() {
      if (!stack.empty() || lines_.find("") == lines_.end()) lines_.emplace(current(stack), line);
    };
    for (std::size_t i = 0; i < s.size(); ++i) {
      const char ch = s[i];
      if (ch == '\n') {
        ++line;
        continue;
      }
      if (ch == ' ' || ch == '\t' || ch == '\r' || ch == ':') continue;
      if (ch == '"') {
        std::string str;
        for (++i; i < s.size() && s[i] != '"'; ++i) {
          if (s[i] == '\\' && i + 1 < s.size()) {
            str += s[++i];
            continue;
          }
          str += s[i];
        }
        if (expect_key) {
          stack.back().key = str;
          expect_key = false;
        } else {
          mark_value();
        }
        continue;
      }
      if (ch == '{' || ch == '[') {
        mark_value();
        Frame f;
        f.object = ch == '{';
        f.base = current(stack);
        stack.push_back(f);
        expect_key = f.object;
        continue;
      }
      if (ch == '}' || ch == ']') {
        if (!stack.empty()) stack.pop_back();
        expect_key = false;
        continue;
      }
      if (ch == ',') {
        if (!stack.empty()) {
          if (stack.back().object) expect_key = true;
          else ++stack.back().index;
        }
        continue;
      }
      // Bare literal: number, true, false, null.
      mark_value();
      while (i + 1 < s.size() && std::string(",]}\n \t\r").find(s[i + 1]) == std::string::npos) ++i;
    }
  }

  std::map<std::string, int> lines_;
};

}  // namespace detail

/// A parsed configuration document together with where it came from.
class ConfigDocument {
public:
  ConfigDocument() = default;
  ConfigDocument(Json root, std::string origin, std::string text)
      : root_(std::move(root)), origin_(std::move(origin)), index_(std::make_shared<detail::LineIndex>(text)) {}

  static ConfigDocument parse(const std::string& text, const std::string& origin = "<config>") {
    try {
      return ConfigDocument(Json::parse(text), origin, text);
    } catch (const Json::parse_error& e) {
      const std::size_t upto = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
      int line = 1, col = 1;
      for (std::size_t i = 0; i < upto; ++i) {
        if (text[i] == '\n') {
          ++line;
          col = 1;
        } else {
          ++col;
        }
      }
      std::ostringstream msg;
      msg << origin << ":" << line << ":" << col << ": syntax error: " << e.what();
      throw ConfigError(msg.str());
    }
  }

  static ConfigDocument load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(path + ": cannot open config file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  [[nodiscard]] const Json& root() const { return root_; }
  Json& root() { return root_; }
  [[nodiscard]] const std::string& origin() const { return origin_; }

  [[noreturn]] void fail(const std::string& pointer, const std::string& what) const {
    std::ostringstream msg;
    msg << origin_;
    if (index_) {
      if (auto line = index_->line_of(pointer)) msg << ":" << *line;
    }
    msg << ": " << (pointer.empty() ? "/" : pointer) << ": " << what;
    throw ConfigError(msg.str());
  }

private:
  Json root_;
  std::string origin_;
  std::shared_ptr<detail::LineIndex> index_;
};

/// Command-line overrides of scalar fields.
struct ConfigOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> runs;
  std::optional<long long> steps;
  std::optional<std::string> scheme;
  std::optional<int> agent;  // 1-based
};

inline void apply_overrides(ConfigDocument& doc, const ConfigOverrides& o) {
  Json& j = doc.root();
  if (!j.is_object()) doc.fail("", "top level must be an object");
  if (o.seed) j["seed"] = *o.seed;
  if (o.out) j["output_dir"] = *o.out;
  if (o.runs) j["n_runs"] = *o.runs;
  if (o.steps) j["steps"] = *o.steps;
  if (o.scheme) j["scheme"]["kind"] = *o.scheme;
  if (o.agent) j["analysis"]["agent"] = *o.agent;
}

/// Validated, typed view of a configuration.
struct ExperimentConfig {
  Json echo;  // effective document after overrides
  std::uint64_t seed = 0;
  std::uint64_t instance_seed = 0;
  std::string output_dir = "out";
  int n_runs = 1;
  long long steps = 0;
  double rate_delta = 0.2;
  RateProbeOptions rate;
  long long consensus_k_lo = 100;
  int mixing_samples = 100000;
  std::optional<Experiment> built;

  [[nodiscard]] const Experiment& experiment() const { return *built; }
  Experiment& experiment() { return *built; }
};

namespace detail {

class Reader {
public:
  explicit Reader(const ConfigDocument& doc) : doc_(doc) {}

  [[nodiscard]] const Json* find(const std::string& ptr) const {
    const Json::json_pointer p(ptr);
    return doc_.root().contains(p) ? &doc_.root().at(p) : nullptr;
  }

  [[nodiscard]] bool has(const std::string& ptr) const { return find(ptr) != nullptr; }

  [[noreturn]] void fail(const std::string& ptr, const std::string& what) const { doc_.fail(ptr, what); }

  [[nodiscard]] const Json& need(const std::string& ptr) const {
    const Json* v = find(ptr);
    if (v == nullptr) fail(ptr, "required field is missing");
    return *v;
  }

  [[nodiscard]] double number(const std::string& ptr) const {
    const Json& v = need(ptr);
    if (!v.is_number()) fail(ptr, "expected a number");
    return v.get<double>();
  }
  [[nodiscard]] double number(const std::string& ptr, double dflt) const { return has(ptr) ? number(ptr) : dflt; }

  [[nodiscard]] long long integer(const std::string& ptr) const {
    const Json& v = need(ptr);
    if (!v.is_number_integer()) fail(ptr, "expected an integer");
    return v.get<long long>();
  }
  [[nodiscard]] long long integer(const std::string& ptr, long long dflt) const { return has(ptr) ? integer(ptr) : dflt; }

  [[nodiscard]] std::uint64_t unsigned_integer(const std::string& ptr) const {
    const Json& v = need(ptr);
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
      fail(ptr, "expected a nonnegative integer");
    }
    return v.get<std::uint64_t>();
  }

  [[nodiscard]] bool boolean(const std::string& ptr, bool dflt) const {
    if (!has(ptr)) return dflt;
    const Json& v = need(ptr);
    if (!v.is_boolean()) fail(ptr, "expected true or false");
    return v.get<bool>();
  }

  [[nodiscard]] std::string string(const std::string& ptr) const {
    const Json& v = need(ptr);
    if (!v.is_string()) fail(ptr, "expected a string");
    return v.get<std::string>();
  }
  [[nodiscard]] std::string string(const std::string& ptr, const std::string& dflt) const { return has(ptr) ? string(ptr) : dflt; }

  [[nodiscard]] Vector vector(const std::string& ptr) const {
    const Json& v = need(ptr);
    if (!v.is_array()) fail(ptr, "expected an array of numbers");
    Vector out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) fail(ptr + "/" + std::to_string(i), "expected a number");
      out(static_cast<Eigen::Index>(i)) = v[i].get<double>();
    }
    return out;
  }

  // An empty array yields a 0 x cols matrix.
  [[nodiscard]] Matrix matrix(const std::string& ptr, Eigen::Index cols) const {
    const Json& v = need(ptr);
    if (!v.is_array()) fail(ptr, "expected an array of rows");
    Matrix out(static_cast<Eigen::Index>(v.size()), cols);
    for (std::size_t i = 0; i < v.size(); ++i) {
      const std::string rp = ptr + "/" + std::to_string(i);
      const Vector row = vector(rp);
      if (row.size() != cols) fail(rp, "row has " + std::to_string(row.size()) + " entries, expected " + std::to_string(cols));
      out.row(static_cast<Eigen::Index>(i)) = row.transpose();
    }
    return out;
  }

private:
  const ConfigDocument& doc_;
};

inline Graph read_graph(const Reader& rd, const std::string& ptr, int m) {
  if (!rd.has(ptr)) return Graph::complete(m);
  const Json& g = rd.need(ptr);
  try {
    if (g.is_string()) {
      const std::string name = g.get<std::string>();
      if (name == "complete") return Graph::complete(m);
      if (name == "ring") return Graph::ring(m);
      rd.fail(ptr, "unknown graph '" + name + "' (expected complete, ring, or an edge list)");
    }
    if (g.is_array()) {
      std::vector<std::pair<int, int>> edges;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const std::string ep = ptr + "/" + std::to_string(i);
        const Json& e = g[i];
        if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() || !e[1].is_number_integer()) {
          rd.fail(ep, "an edge is a pair of 1-based agent indices");
        }
        edges.emplace_back(e[0].get<int>() - 1, e[1].get<int>() - 1);
      }
      return Graph(m, edges);
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    rd.fail(ptr, e.what());
  }
  rd.fail(ptr, "expected a graph name or an edge list");
}

}  // namespace detail

/// Builds every object an experiment needs. The problem instance is drawn
/// from `instance_seed` (defaults to the master seed) unless R_u and sigma_v2
/// are given explicitly.
inline ExperimentConfig build_config(const ConfigDocument& doc) {
  const detail::Reader rd(doc);
  if (!doc.root().is_object()) rd.fail("", "top level must be an object");
  ExperimentConfig cfg;
  cfg.echo = doc.root();
  if (!rd.has("/seed")) rd.fail("/seed", "a master seed is required");
  cfg.seed = rd.unsigned_integer("/seed");
  cfg.instance_seed = rd.has("/problem/instance_seed") ? rd.unsigned_integer("/problem/instance_seed") : cfg.seed;
  cfg.output_dir = rd.string("/output_dir", "out");
  cfg.steps = rd.integer("/steps");
  if (cfg.steps < 0) rd.fail("/steps", "must be >= 0");
  cfg.n_runs = static_cast<int>(rd.integer("/n_runs", 1));
  if (cfg.n_runs < 1) rd.fail("/n_runs", "must be >= 1");

  // Problem.
  const int m = static_cast<int>(rd.integer("/problem/agents"));
  if (m < 1) rd.fail("/problem/agents", "must be >= 1");
  const Vector x_star = rd.vector("/problem/x_star");
  const auto d = x_star.size();
  if (d < 1) rd.fail("/problem/x_star", "must have at least one component");
  if (rd.has("/problem/dim") && rd.integer("/problem/dim") != d) rd.fail("/problem/dim", "does not match the length of x_star");
  Vector tilt = Vector::Zero(d);
  if (rd.has("/problem/tilt")) {
    tilt = rd.vector("/problem/tilt");
    if (tilt.size() != d) rd.fail("/problem/tilt", "must have the same length as x_star");
  }

  // Polyhedron.
  const Matrix B = rd.has("/polyhedron/B") ? rd.matrix("/polyhedron/B", d) : Matrix(0, d);
  const Vector b = rd.has("/polyhedron/b") ? rd.vector("/polyhedron/b") : Vector(0);
  const Matrix C = rd.has("/polyhedron/C") ? rd.matrix("/polyhedron/C", d) : Matrix(0, d);
  const Vector c = rd.has("/polyhedron/c") ? rd.vector("/polyhedron/c") : Vector(0);
  if (b.size() != B.rows()) rd.fail("/polyhedron/b", "needs one entry per row of B");
  if (c.size() != C.rows()) rd.fail("/polyhedron/c", "needs one entry per row of C");
  std::optional<Polyhedron> set;
  try {
    set.emplace(B, b, C, c);
  } catch (const std::exception& e) {
    rd.fail("/polyhedron", e.what());
  }

  std::optional<QuadraticEstimationProblem> problem;
  if (rd.has("/problem/R_u")) {
    const Json& Rs = rd.need("/problem/R_u");
    if (!Rs.is_array() || static_cast<int>(Rs.size()) != m) rd.fail("/problem/R_u", "needs one d x d matrix per agent");
    std::vector<Matrix> R;
    for (int j = 0; j < m; ++j) {
      const std::string p = "/problem/R_u/" + std::to_string(j);
      R.push_back(rd.matrix(p, d));
      if (R.back().rows() != d) rd.fail(p, "must be d x d");
    }
    const Vector s2 = rd.vector("/problem/sigma_v2");
    if (s2.size() != m) rd.fail("/problem/sigma_v2", "needs one variance per agent");
    try {
      problem.emplace(x_star, R, std::vector<double>(s2.data(), s2.data() + s2.size()), tilt);
    } catch (const std::exception& e) {
      rd.fail("/problem", e.what());
    }
  } else {
    std::pair<double, double> range{0.5, 1.0};
    if (rd.has("/problem/sigma_range")) {
      const Vector r = rd.vector("/problem/sigma_range");
      if (r.size() != 2 || !(r(0) >= 0.0 && r(1) >= r(0))) rd.fail("/problem/sigma_range", "expected [lo, hi] with 0 <= lo <= hi");
      range = {r(0), r(1)};
    }
    const double margin = rd.number("/problem/min_restricted_curvature", 0.1);
    Rng irng = replication_rng(cfg.instance_seed, streams::kInstance, 0);
    try {
      problem.emplace(generate_instance(m, static_cast<int>(d), x_star, irng, range, B, margin, tilt));
    } catch (const std::exception& e) {
      rd.fail("/problem", e.what());
    }
  }

  // Gossip scheme.
  const std::string kind = rd.string("/scheme/kind", "pairwise");
  std::optional<GossipScheme> scheme;
  try {
    if (kind == "pairwise") {
      scheme.emplace(GossipScheme::pairwise(detail::read_graph(rd, "/scheme/graph", m)));
    } else if (kind == "broadcast") {
      scheme.emplace(GossipScheme::broadcast(detail::read_graph(rd, "/scheme/graph", m), rd.number("/scheme/mix", 0.5)));
    } else if (kind == "fixed") {
      const Json* W = rd.find("/scheme/matrix");
      if (W == nullptr || (W->is_string() && W->get<std::string>() == "averaging")) {
        scheme.emplace(GossipScheme::averaging(m));
      } else {
        const Matrix Wm = rd.matrix("/scheme/matrix", m);
        if (Wm.rows() != m) rd.fail("/scheme/matrix", "must be m x m");
        scheme.emplace(GossipScheme::fixed(Wm));
      }
    } else {
      rd.fail("/scheme/kind", "unknown scheme '" + kind + "' (expected pairwise, broadcast, or fixed)");
    }
  } catch (const ConfigError& e) {
    if (std::string(e.what()).rfind(doc.origin(), 0) == 0) throw;
    rd.fail("/scheme", e.what());
  } catch (const std::invalid_argument& e) {
    rd.fail("/scheme", e.what());
  }
  if (scheme->agents() != m) rd.fail("/scheme", "agent count differs from problem/agents");

  // Step size.
  std::optional<StepSizeSchedule> schedule;
  try {
    schedule.emplace(rd.number("/schedule/a", 5.0), rd.number("/schedule/alpha_exp", 0.67));
  } catch (const ConfigError& e) {
    rd.fail("/schedule", e.what());
  } catch (const std::invalid_argument& e) {
    rd.fail("/schedule", e.what());
  }

  const std::string algo = rd.string("/algorithm", "dda");
  if (algo != "dda" && algo != "dpg") rd.fail("/algorithm", "expected dda or dpg");

  RunOptions run;
  run.steps = cfg.steps;
  run.reference = x_star;
  run.active_tol = rd.number("/tolerances/active_set", 1e-6);
  if (!(run.active_tol >= 0.0)) rd.fail("/tolerances/active_set", "must be >= 0");
  if (rd.has("/init/point")) {
    run.init.point = rd.vector("/init/point");
    if (run.init.point->size() != d) rd.fail("/init/point", "must have length d");
  } else {
    if (rd.has("/init/box")) {
      run.init.box = rd.matrix("/init/box", 2);
      if (run.init.box.rows() != d) rd.fail("/init/box", "needs one [lo, hi] pair per coordinate");
      for (Eigen::Index i = 0; i < d; ++i) {
        if (!(run.init.box(i, 0) <= run.init.box(i, 1))) rd.fail("/init/box/" + std::to_string(i), "lo must not exceed hi");
      }
    } else {
      run.init.box = Matrix(d, 2);
      run.init.box.col(0).setZero();
      run.init.box.col(1).setConstant(5.0);
    }
    run.init.per_agent = rd.boolean("/init/per_agent", false);
  }
  run.record.enabled = true;
  run.record.dense_stride = rd.integer("/record/stride", 1);
  run.record.dense_until = rd.integer("/record/dense_until", std::max<long long>(cfg.steps, 1));
  run.record.sparse_stride = rd.integer("/record/sparse_stride", run.record.dense_stride);
  if (run.record.dense_stride < 1) rd.fail("/record/stride", "must be >= 1");
  if (run.record.sparse_stride < 1) rd.fail("/record/sparse_stride", "must be >= 1");

  const int agent = static_cast<int>(rd.integer("/analysis/agent", 1));
  if (agent < 1 || agent > m) rd.fail("/analysis/agent", "must be between 1 and problem/agents");
  const double window = rd.number("/analysis/window_fraction", 0.25);
  if (!(window > 0.0 && window <= 1.0)) rd.fail("/analysis/window_fraction", "must lie in (0, 1]");
  cfg.rate_delta = rd.number("/analysis/delta", 0.2);
  cfg.rate.windows = static_cast<int>(rd.integer("/analysis/windows", 5));
  cfg.rate.tail_start_fraction = rd.number("/analysis/tail_start_fraction", 0.1);
  if (!(cfg.rate.tail_start_fraction > 0.0 && cfg.rate.tail_start_fraction < 1.0)) {
    rd.fail("/analysis/tail_start_fraction", "must lie in (0, 1)");
  }
  cfg.consensus_k_lo = rd.integer("/analysis/consensus_k_lo", 100);
  cfg.mixing_samples = static_cast<int>(rd.integer("/analysis/mixing_samples", 100000));
  const int threads = static_cast<int>(rd.integer("/threads", 1));
  if (threads < 1) rd.fail("/threads", "must be >= 1");

  cfg.built = Experiment{std::move(*problem), std::move(*set), std::move(*scheme), *schedule, run,
                              algo == "dda" ? Algorithm::DDA : Algorithm::DPG, agent - 1, window, run.active_tol, threads};
  return cfg;
}

}  // namespace dda
