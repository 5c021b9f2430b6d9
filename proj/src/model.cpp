#include "crossglmm/model.hpp"

#include <algorithm>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>

#include "strings.hpp"

namespace crossglmm {

double conditional_mass(int y, double mu, double u, double v) {
  const double eta = mu + u + v;
  return y == 1 ? logistic(eta) : logistic(-eta);
}

// ---------------------------------------------------------------------------

CrossedDesign::CrossedDesign(Eigen::MatrixXi counts) : counts_(std::move(counts)) {
  if (counts_.rows() == 0 || counts_.cols() == 0) {
    throw std::invalid_argument("design must have at least one row and one column");
  }
  if ((counts_.array() < 0).any()) {
    throw std::invalid_argument("replicate counts must be non-negative");
  }
  for (int i = 0; i < counts_.rows(); ++i) {
    if ((counts_.row(i).array() == 0).all()) {
      throw std::invalid_argument("design is not irreducible: row " + std::to_string(i + 1) +
                                  " has no cells");
    }
  }
  for (int j = 0; j < counts_.cols(); ++j) {
    if ((counts_.col(j).array() == 0).all()) {
      throw std::invalid_argument("design is not irreducible: column " +
                                  std::to_string(j + 1) + " has no cells");
    }
  }
  offsets_ = Eigen::MatrixXi::Constant(counts_.rows(), counts_.cols(), -1);
  for (int i = 0; i < counts_.rows(); ++i) {
    for (int j = 0; j < counts_.cols(); ++j) {
      if (counts_(i, j) == 0) continue;
      offsets_(i, j) = static_cast<int>(obs_.size());
      for (int k = 0; k < counts_(i, j); ++k) obs_.push_back({i, j, k});
    }
  }
}

CrossedDesign CrossedDesign::full_crossing(int m, int n, int replicates) {
  if (m < 1 || n < 1 || replicates < 1) {
    throw std::invalid_argument("full crossing needs m, n, replicates >= 1");
  }
  return CrossedDesign(Eigen::MatrixXi::Constant(m, n, replicates));
}

CrossedDesign CrossedDesign::salamander_style(int m, int n, int block) {
  if (m < 1 || n < 1 || block < 1) {
    throw std::invalid_argument("salamander-style design needs m, n, block >= 1");
  }
  Eigen::MatrixXi counts(m, n);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) counts(i, j) = (i / block == j / block) ? 2 : 1;
  }
  return CrossedDesign(std::move(counts));
}

int CrossedDesign::flat_index(int i, int j, int k) const {
  if (i < 0 || j < 0 || i >= rows() || j >= cols()) return -1;
  if (k < 0 || k >= counts_(i, j)) return -1;
  return offsets_(i, j) + k;
}

CrossedDesign CrossedDesign::transposed() const { return CrossedDesign(counts_.transpose()); }

bool CrossedDesign::is_full_crossing() const {
  return (counts_.array() == 1).all();
}

// ---------------------------------------------------------------------------

std::string param_name(Param p) {
  switch (p) {
    case Param::Mu: return "mu";
    case Param::Sigma2: return "sigma2";
    case Param::Tau2: return "tau2";
  }
  return "?";
}

Theta::Theta(double mu_, double sigma2_, double tau2_, FreeMask free_)
    : mu(mu_), sigma2(sigma2_), tau2(tau2_), free(free_) {
  if (!std::isfinite(mu) || !std::isfinite(sigma2) || !std::isfinite(tau2)) {
    throw std::invalid_argument("theta components must be finite");
  }
  if (sigma2 < 0.0 || tau2 < 0.0) {
    throw std::invalid_argument("variance components must be non-negative");
  }
}

Theta Theta::mu_only(double mu, double sigma2, double tau2) {
  return Theta(mu, sigma2, tau2, FreeMask{true, false, false});
}

double Theta::gamma() const {
  const double p = psi2();
  if (!(p > 0.0)) throw std::domain_error("gamma undefined when psi2 = 0");
  return sigma2 / p;
}

double Theta::get(Param p) const {
  switch (p) {
    case Param::Mu: return mu;
    case Param::Sigma2: return sigma2;
    case Param::Tau2: return tau2;
  }
  return 0.0;
}

void Theta::set(Param p, double value) {
  switch (p) {
    case Param::Mu: mu = value; break;
    case Param::Sigma2: sigma2 = value; break;
    case Param::Tau2: tau2 = value; break;
  }
}

std::vector<Param> Theta::free_params() const {
  std::vector<Param> out;
  if (free.mu) out.push_back(Param::Mu);
  if (free.sigma2) out.push_back(Param::Sigma2);
  if (free.tau2) out.push_back(Param::Tau2);
  return out;
}

Eigen::VectorXd free_values(const Theta& theta) {
  const auto params = theta.free_params();
  Eigen::VectorXd out(static_cast<Eigen::Index>(params.size()));
  for (std::size_t a = 0; a < params.size(); ++a) out[Eigen::Index(a)] = theta.get(params[a]);
  return out;
}

Eigen::VectorXd to_working(const Theta& theta) {
  const auto params = theta.free_params();
  Eigen::VectorXd out(static_cast<Eigen::Index>(params.size()));
  for (std::size_t a = 0; a < params.size(); ++a) {
    const double x = theta.get(params[a]);
    out[Eigen::Index(a)] = params[a] == Param::Mu ? x : std::log(x);
  }
  return out;
}

Theta from_working(const Theta& base, const Eigen::Ref<const Eigen::VectorXd>& working) {
  const auto params = base.free_params();
  if (static_cast<std::size_t>(working.size()) != params.size()) {
    throw std::invalid_argument("working vector size does not match free parameters");
  }
  Theta out = base;
  for (std::size_t a = 0; a < params.size(); ++a) {
    const double w = working[Eigen::Index(a)];
    out.set(params[a], params[a] == Param::Mu ? w : std::exp(w));
  }
  return out;
}

Eigen::VectorXd working_jacobian(const Theta& theta) {
  const auto params = theta.free_params();
  Eigen::VectorXd out(static_cast<Eigen::Index>(params.size()));
  for (std::size_t a = 0; a < params.size(); ++a) {
    out[Eigen::Index(a)] = params[a] == Param::Mu ? 1.0 : theta.get(params[a]);
  }
  return out;
}

Eigen::VectorXd working_lower(const Theta& theta) {
  const auto params = theta.free_params();
  Eigen::VectorXd out(static_cast<Eigen::Index>(params.size()));
  for (std::size_t a = 0; a < params.size(); ++a) {
    out[Eigen::Index(a)] = params[a] == Param::Mu ? kMuLower : std::log(kVarLower);
  }
  return out;
}

Eigen::VectorXd working_upper(const Theta& theta) {
  const auto params = theta.free_params();
  Eigen::VectorXd out(static_cast<Eigen::Index>(params.size()));
  for (std::size_t a = 0; a < params.size(); ++a) {
    out[Eigen::Index(a)] = params[a] == Param::Mu ? kMuUpper : std::log(kVarUpper);
  }
  return out;
}

Theta parse_theta_triple(const std::string& text) {
  const auto parts = detail::split(text, ',');
  if (parts.size() != 3) {
    throw std::invalid_argument("expected mu,sigma2,tau2 but got '" + text + "'");
  }
  return Theta(detail::parse_double(parts[0]), detail::parse_double(parts[1]),
               detail::parse_double(parts[2]));
}

FreeMask parse_free_mask(const std::string& text) {
  FreeMask mask{false, false, false};
  for (const auto& raw : detail::split(text, '|')) {
    const auto name = detail::trim(raw);
    if (name.empty()) continue;
    if (name == "mu") mask.mu = true;
    else if (name == "sigma2") mask.sigma2 = true;
    else if (name == "tau2") mask.tau2 = true;
    else throw std::invalid_argument("unknown parameter '" + name + "' in free list");
  }
  return mask;
}

std::string format_free_mask(const FreeMask& mask) {
  std::string out;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += '|';
    out += name;
  };
  add(mask.mu, "mu");
  add(mask.sigma2, "sigma2");
  add(mask.tau2, "tau2");
  return out;
}

std::string serialize_theta(const Theta& theta) {
  std::ostringstream out;
  out << "mu=" << detail::format_double(theta.mu) << '\n'
      << "sigma2=" << detail::format_double(theta.sigma2) << '\n'
      << "tau2=" << detail::format_double(theta.tau2) << '\n'
      << "free=" << format_free_mask(theta.free) << '\n';
  return out.str();
}

Theta deserialize_theta(const std::string& text) {
  double mu = 0.0, sigma2 = 1.0, tau2 = 1.0;
  FreeMask mask{};
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    line = detail::trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("expected key=value: '" + line + "'");
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    if (key == "mu") mu = detail::parse_double(value);
    else if (key == "sigma2") sigma2 = detail::parse_double(value);
    else if (key == "tau2") tau2 = detail::parse_double(value);
    else if (key == "free") mask = parse_free_mask(value);
    else throw std::invalid_argument("unknown theta key '" + key + "'");
  }
  return Theta(mu, sigma2, tau2, mask);
}

// ---------------------------------------------------------------------------

ResponseTable::ResponseTable(CrossedDesign design, std::vector<std::uint8_t> y)
    : design_(std::move(design)), y_(std::move(y)) {
  if (static_cast<int>(y_.size()) != design_.total()) {
    throw std::invalid_argument("response count does not match the design");
  }
  successes_ = Eigen::MatrixXi::Zero(design_.rows(), design_.cols());
  const auto& obs = design_.observations();
  for (std::size_t t = 0; t < y_.size(); ++t) {
    if (y_[t] > 1) throw std::invalid_argument("responses must be binary");
    successes_(obs[t].i, obs[t].j) += y_[t];
  }
}

int ResponseTable::y(int i, int j, int k) const {
  const int flat = design_.flat_index(i, j, k);
  if (flat < 0) throw std::out_of_range("observation not in design");
  return y_[static_cast<std::size_t>(flat)];
}

double ResponseTable::mean() const {
  double s = 0.0;
  for (auto v : y_) s += v;
  return s / static_cast<double>(y_.size());
}

ResponseTable ResponseTable::transposed() const {
  CrossedDesign t = design_.transposed();
  std::vector<std::uint8_t> y(y_.size());
  for (const auto& o : t.observations()) {
    y[static_cast<std::size_t>(t.flat_index(o.i, o.j, o.k))] =
        static_cast<std::uint8_t>(this->y(o.j, o.i, o.k));
  }
  return ResponseTable(std::move(t), std::move(y));
}

ResponseTable table_from_bits(const CrossedDesign& design, std::uint64_t bits) {
  std::vector<std::uint8_t> y(static_cast<std::size_t>(design.total()));
  for (std::size_t t = 0; t < y.size(); ++t) y[t] = static_cast<std::uint8_t>((bits >> t) & 1u);
  return ResponseTable(design, std::move(y));
}

void write_table_csv(std::ostream& out, const ResponseTable& data) {
  out << "i,j,k,y\n";
  const auto& obs = data.design().observations();
  for (std::size_t t = 0; t < obs.size(); ++t) {
    out << obs[t].i + 1 << ',' << obs[t].j + 1 << ',' << obs[t].k + 1 << ','
        << int(data.values()[t]) << '\n';
  }
}

ResponseTable read_table_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != "i,j,k,y") {
    throw std::invalid_argument("expected CSV header 'i,j,k,y'");
  }
  struct Row { int i, j, k, y; };
  std::vector<Row> rows;
  int m = 0, n = 0;
  while (std::getline(in, line)) {
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto f = detail::split(line, ',');
    if (f.size() != 4) throw std::invalid_argument("malformed CSV row: '" + line + "'");
    Row r{detail::parse_int(f[0]), detail::parse_int(f[1]), detail::parse_int(f[2]),
          detail::parse_int(f[3])};
    if (r.i < 1 || r.j < 1 || r.k < 1) throw std::invalid_argument("indices are 1-based");
    if (r.y != 0 && r.y != 1) throw std::invalid_argument("responses must be 0 or 1");
    m = std::max(m, r.i);
    n = std::max(n, r.j);
    rows.push_back(r);
  }
  if (rows.empty()) throw std::invalid_argument("no observations in CSV");
  Eigen::MatrixXi counts = Eigen::MatrixXi::Zero(m, n);
  for (const auto& r : rows) counts(r.i - 1, r.j - 1) = std::max(counts(r.i - 1, r.j - 1), r.k);
  CrossedDesign design(counts);
  if (static_cast<int>(rows.size()) != design.total()) {
    throw std::invalid_argument("replicates must be numbered 1..c_ij without gaps or repeats");
  }
  std::vector<std::uint8_t> y(rows.size(), 0);
  std::vector<bool> seen(rows.size(), false);
  for (const auto& r : rows) {
    const int flat = design.flat_index(r.i - 1, r.j - 1, r.k - 1);
    if (seen[std::size_t(flat)]) throw std::invalid_argument("duplicate observation in CSV");
    seen[std::size_t(flat)] = true;
    y[std::size_t(flat)] = static_cast<std::uint8_t>(r.y);
  }
  return ResponseTable(std::move(design), std::move(y));
}

namespace {

double log_normal_density(double x, double var) {
  if (var == 0.0) {
    if (x != 0.0) throw std::domain_error("zero variance with a nonzero random effect");
    throw std::domain_error("normal density undefined at zero variance");
  }
  return -0.5 * (std::log(2.0 * std::numbers::pi * var) + x * x / var);
}

}  // namespace

double complete_data_loglik(const ResponseTable& data, const Theta& theta,
                            const RandomEffects& effects) {
  const auto& design = data.design();
  if (effects.u.size() != design.rows() || effects.v.size() != design.cols()) {
    throw std::invalid_argument("random effect lengths do not match the design");
  }
  double total = 0.0;
  for (const auto& o : design.observations()) {
    const double eta = theta.mu + effects.u[o.i] + effects.v[o.j];
    total += data.y(o.i, o.j, o.k) == 1 ? log_logistic(eta) : log_logistic(-eta);
  }
  for (Eigen::Index i = 0; i < effects.u.size(); ++i) {
    total += log_normal_density(effects.u[i], theta.sigma2);
  }
  for (Eigen::Index j = 0; j < effects.v.size(); ++j) {
    total += log_normal_density(effects.v[j], theta.tau2);
  }
  return total;
}

// ---------------------------------------------------------------------------

std::string subset_kind_name(SubsetKind kind) {
  switch (kind) {
    case SubsetKind::Diagonal: return "diagonal";
    case SubsetKind::ReplicatePairDiagonal: return "replicate_pair";
    case SubsetKind::OffDiagonalPair: return "offdiag_pair";
    case SubsetKind::Explicit: return "explicit";
  }
  return "?";
}

SubsetKind parse_subset_kind(const std::string& text) {
  const auto t = detail::trim(text);
  if (t == "diagonal") return SubsetKind::Diagonal;
  if (t == "replicate_pair") return SubsetKind::ReplicatePairDiagonal;
  if (t == "offdiag_pair") return SubsetKind::OffDiagonalPair;
  throw std::invalid_argument("unknown subset kind '" + text +
                              "' (expected diagonal|replicate_pair|offdiag_pair)");
}

std::vector<int> SubsetSpec::indices() const {
  std::vector<int> out;
  for (const auto& e : elements) out.insert(out.end(), e.begin(), e.end());
  return out;
}

std::uint64_t SubsetSpec::mask() const {
  std::uint64_t bits = 0;
  for (int idx : indices()) {
    if (idx >= 64) throw std::out_of_range("subset mask needs N <= 64");
    bits |= std::uint64_t{1} << idx;
  }
  return bits;
}

SubsetSpec resolve_subset(const CrossedDesign& design, SubsetKind kind) {
  SubsetSpec spec{kind, {}};
  const int diag = std::min(design.rows(), design.cols());
  switch (kind) {
    case SubsetKind::Diagonal:
      for (int i = 0; i < diag; ++i) {
        if (design.contains(i, i)) spec.elements.push_back({design.flat_index(i, i, 0)});
      }
      break;
    case SubsetKind::ReplicatePairDiagonal:
      for (int i = 0; i < diag; ++i) {
        if (design.count(i, i) == 2) {
          spec.elements.push_back({design.flat_index(i, i, 0), design.flat_index(i, i, 1)});
        }
      }
      break;
    case SubsetKind::OffDiagonalPair:
      // 1-based columns 2i-1 and 2i are 0-based 2i and 2i+1.
      for (int i = 0; i < design.rows() && 2 * i + 1 < design.cols(); ++i) {
        if (design.contains(i, 2 * i) && design.contains(i, 2 * i + 1)) {
          spec.elements.push_back({design.flat_index(i, 2 * i, 0), design.flat_index(i, 2 * i + 1, 0)});
        }
      }
      break;
    case SubsetKind::Explicit:
      throw std::invalid_argument("explicit subsets are built with explicit_subset()");
  }
  return spec;
}

SubsetSpec explicit_subset(const CrossedDesign& design, std::vector<int> indices) {
  std::sort(indices.begin(), indices.end());
  indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
  SubsetSpec spec{SubsetKind::Explicit, {}};
  for (int idx : indices) {
    if (idx < 0 || idx >= design.total()) throw std::out_of_range("subset index outside design");
    spec.elements.push_back({idx});
  }
  return spec;
}

}  // namespace crossglmm
