#include "parscale/law/law.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

#include "parscale/common/errors.hpp"
#include "parscale/common/kv_config.hpp"

namespace parscale {

std::string to_string(LawFamily f) {
  return f == LawFamily::logarithmic ? "logarithmic" : "theoretical";
}

LawFamily parse_law_family(const std::string& name) {
  if (name == "logarithmic" || name == "log") return LawFamily::logarithmic;
  if (name == "theoretical" || name == "theo") return LawFamily::theoretical;
  throw InputError("unknown law family '" + name + "' (expected log or theoretical)");
}

double eval_law(const LawParams& p, double N, double P) {
  if (!(N > 0.0)) throw InputError("eval_law: N must be positive");
  if (!(P >= 1.0)) throw InputError("eval_law: P must be at least 1");
  if (p.family == LawFamily::logarithmic) {
    return std::pow(p.A / (N * (p.k * std::log(P) + 1.0)), p.alpha) + p.E;
  }
  return std::pow(p.A / N, p.alpha) * ((P - 1.0) * p.rho + 1.0) / P + p.E;
}

double huber(double r, double delta) {
  const double a = std::abs(r);
  return a <= delta ? 0.5 * r * r : delta * (a - 0.5 * delta);
}

double r_squared(std::span<const double> observed, std::span<const double> predicted) {
  if (observed.empty() || observed.size() != predicted.size()) {
    throw InputError("r_squared needs equal, nonzero lengths");
  }
  double mean = 0.0;
  for (double v : observed) mean += v;
  mean /= static_cast<double>(observed.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    ss_res += (observed[i] - predicted[i]) * (observed[i] - predicted[i]);
    ss_tot += (observed[i] - mean) * (observed[i] - mean);
  }
  if (ss_tot == 0.0) throw InputError("r_squared undefined: observed values have zero variance");
  return 1.0 - ss_res / ss_tot;
}

double law_objective(const LawParams& params, std::span<const LawObservation> obs,
                     double delta) {
  double sum = 0.0;
  for (const auto& o : obs) {
    sum += huber(std::log(eval_law(params, o.N, o.P)) - std::log(o.loss), delta);
  }
  return sum;
}

LawFitResult evaluate_fit(const LawParams& params,
                          std::span<const LawObservation> observations, double delta) {
  LawFitResult out;
  out.params = params;
  std::vector<double> observed;
  for (const auto& o : observations) {
    out.predictions.push_back(eval_law(params, o.N, o.P));
    observed.push_back(o.loss);
  }
  out.huber_objective = law_objective(params, observations, delta);
  out.r_squared = r_squared(observed, out.predictions);
  return out;
}

std::vector<LawParams> initialization_grid(LawFamily family) {
  const double Es[] = {std::exp(-1.0), std::exp(-0.5), 1.0};
  const double As[] = {-4.0, -2.0, 0.0, 2.0, 4.0};
  const double alphas[] = {0.0, 0.5, 1.0, 1.5, 2.0};
  const std::vector<double> shapes = family == LawFamily::logarithmic
                                         ? std::vector<double>{0.2, 0.4, 0.6, 0.9}
                                         : std::vector<double>{0.1, 0.3, 0.5, 0.7, 0.9};
  std::vector<LawParams> grid;
  for (double E : Es) {
    for (double a : As) {
      for (double alpha : alphas) {
        for (double s : shapes) {
          LawParams p;
          p.family = family;
          p.E = E;
          p.A = std::exp(a) * 1e9;
          p.alpha = alpha;
          if (family == LawFamily::logarithmic) {
            p.k = s;
          } else {
            p.rho = s;
          }
          grid.push_back(p);
        }
      }
    }
  }
  return grid;
}

std::vector<ContourPoint> contour_grid(const LawParams& params,
                                       std::span<const double> n_values,
                                       std::span<const double> p_values) {
  std::vector<ContourPoint> out;
  out.reserve(n_values.size() * p_values.size());
  for (double n : n_values) {
    for (double p : p_values) out.push_back({n, p, eval_law(params, n, p)});
  }
  return out;
}

namespace {

std::vector<double> log_axis(double lo, double hi, std::size_t points, const char* what) {
  if (!(lo > 0.0 && hi >= lo)) {
    throw InputError(std::string("contour_grid: ") + what + " range must be positive and ordered");
  }
  if (points == 0) throw InputError(std::string("contour_grid: ") + what + " needs points");
  std::vector<double> axis(points);
  if (points == 1) {
    axis[0] = lo;
    return axis;
  }
  const double step = std::log(hi / lo) / static_cast<double>(points - 1);
  for (std::size_t i = 0; i < points; ++i) {
    axis[i] = lo * std::exp(step * static_cast<double>(i));
  }
  axis.back() = hi;
  return axis;
}

}  // namespace

std::vector<ContourPoint> contour_grid(const LawParams& params, double n_min,
                                       double n_max, std::size_t n_points,
                                       double p_min, double p_max,
                                       std::size_t p_points) {
  if (!(p_min >= 1.0)) throw InputError("contour_grid: P range must start at 1 or above");
  const auto ns = log_axis(n_min, n_max, n_points, "N");
  const auto ps = log_axis(p_min, p_max, p_points, "P");
  return contour_grid(params, ns, ps);
}

std::vector<LawObservation> parse_observations_csv(const std::string& text,
                                                   const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::vector<LawObservation> out;
  auto fail = [&](const std::string& what) {
    throw InputError(origin + ":" + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      const auto b = cell.find_first_not_of(" \t");
      const auto e = cell.find_last_not_of(" \t");
      cells.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
    }
    if (!header_seen) {
      if (cells.size() < 3 || cells[0] != "N" || cells[1] != "P" || cells[2] != "loss") {
        fail("expected header N,P,loss");
      }
      header_seen = true;
      continue;
    }
    if (cells.size() < 3) fail("expected 3 columns N,P,loss");
    double v[3];
    for (int i = 0; i < 3; ++i) {
      const auto parsed = parse_real(cells[i]);
      if (!parsed) fail("not a number: '" + cells[i] + "'");
      v[i] = *parsed;
    }
    if (!(v[0] > 0.0)) fail("N must be positive");
    if (!(v[1] >= 1.0) || v[1] != std::floor(v[1])) fail("P must be a positive integer");
    if (!(v[2] > 0.0) || !std::isfinite(v[2])) fail("loss must be positive");
    out.push_back({v[0], v[1], v[2]});
  }
  if (!header_seen) throw InputError(origin + ": empty observations file");
  return out;
}

std::vector<LawObservation> read_observations_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open observations: " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_observations_csv(text, path.string());
}

std::string fit_to_json(const LawFitResult& fit, std::span<const LawObservation> observations) {
  nlohmann::ordered_json j;
  j["family"] = to_string(fit.params.family);
  nlohmann::ordered_json params;
  params["A"] = fit.params.A;
  if (fit.params.family == LawFamily::logarithmic) {
    params["k"] = fit.params.k;
  } else {
    params["rho"] = fit.params.rho;
  }
  params["E"] = fit.params.E;
  params["alpha"] = fit.params.alpha;
  j["params"] = params;
  j["huber"] = fit.huber_objective;
  j["r_squared"] = fit.r_squared;
  auto preds = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < fit.predictions.size(); ++i) {
    nlohmann::ordered_json row;
    if (i < observations.size()) {
      row["N"] = observations[i].N;
      row["P"] = observations[i].P;
      row["loss"] = observations[i].loss;
    }
    row["predicted"] = fit.predictions[i];
    preds.push_back(row);
  }
  j["predictions"] = preds;
  j["starts"] = fit.starts;
  j["converged_starts"] = fit.converged_starts;
  return j.dump(2) + "\n";
}

LawParams params_from_json(const std::string& json_text) {
  try {
    const auto j = nlohmann::json::parse(json_text);
    LawParams p;
    p.family = parse_law_family(j.at("family").get<std::string>());
    const auto& q = j.at("params");
    p.A = q.at("A").get<double>();
    p.E = q.at("E").get<double>();
    p.alpha = q.at("alpha").get<double>();
    if (p.family == LawFamily::logarithmic) {
      p.k = q.at("k").get<double>();
    } else {
      p.rho = q.at("rho").get<double>();
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed law fit JSON: ") + e.what());
  }
}

std::string contour_to_csv(std::span<const ContourPoint> grid) {
  std::string out = "N,P,loss\n";
  for (const auto& g : grid) {
    out += format_real(g.N) + "," + format_real(g.P) + "," + format_real(g.loss) + "\n";
  }
  return out;
}

}  // namespace parscale
