#include "affakt/ot_core.hpp"

#include "affakt/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>

namespace affakt {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Sums in ascending order so the result does not depend on the order of
// the inputs; this keeps Sinkhorn bit-exactly equivariant under row and
// column permutations. Reorders `values`.
double log_sum_exp(double* values, Eigen::Index count) {
  std::sort(values, values + count);
  const double max_val = values[count - 1];
  if (!std::isfinite(max_val)) return max_val;
  double sum = 0.0;
  for (Eigen::Index k = 0; k < count; ++k) sum += std::exp(values[k] - max_val);
  return max_val + std::log(sum);
}

Vector row_norms(const Matrix& x, const char* which) {
  Vector norms = x.rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i) {
    if (!(norms(i) > 0.0) || !std::isfinite(norms(i))) {
      throw ZeroNormError(which, static_cast<std::size_t>(i));
    }
  }
  return norms;
}

void check_cost_shape(const DiscreteDistribution& p, const DiscreteDistribution& q,
                      const CostMatrix& cost, const char* op) {
  if (cost.rows() != p.size() || cost.cols() != q.size()) {
    throw DimensionError(std::string(op) + ": cost is " + std::to_string(cost.rows()) + "x" +
                         std::to_string(cost.cols()) + " but marginals are " +
                         std::to_string(p.size()) + " and " + std::to_string(q.size()));
  }
}

}  // namespace

DiscreteDistribution::DiscreteDistribution(Vector weights) : weights_(std::move(weights)) {
  if (weights_.size() < 1) throw InvariantError("distribution must have at least one atom");
  for (Eigen::Index i = 0; i < weights_.size(); ++i) {
    if (!std::isfinite(weights_(i)) || weights_(i) < 0.0) {
      throw InvariantError("distribution weight " + std::to_string(i) +
                           " is negative or non-finite");
    }
  }
  const double total = weights_.sum();
  if (std::abs(total - 1.0) > kSumTolerance) {
    throw InvariantError("distribution weights sum to " + std::to_string(total) + ", not 1");
  }
}

DiscreteDistribution DiscreteDistribution::uniform(std::size_t size) {
  if (size == 0) throw InvariantError("distribution must have at least one atom");
  return DiscreteDistribution(
      Vector::Constant(static_cast<Eigen::Index>(size), 1.0 / static_cast<double>(size)));
}

CostMatrix::CostMatrix(Matrix entries) : entries_(std::move(entries)) {
  if (entries_.rows() < 1 || entries_.cols() < 1) throw DimensionError("empty cost matrix");
  for (Eigen::Index j = 0; j < entries_.cols(); ++j) {
    for (Eigen::Index i = 0; i < entries_.rows(); ++i) {
      const double c = entries_(i, j);
      if (!std::isfinite(c) || c < 0.0) {
        throw InvariantError("cost entry (" + std::to_string(i) + "," + std::to_string(j) +
                             ") is negative or non-finite");
      }
    }
  }
}

TransportPlan::TransportPlan(Matrix entries, DiscreteDistribution row_marginal,
                             DiscreteDistribution col_marginal)
    : entries_(std::move(entries)),
      row_marginal_(std::move(row_marginal)),
      col_marginal_(std::move(col_marginal)) {
  if (static_cast<std::size_t>(entries_.rows()) != row_marginal_.size() ||
      static_cast<std::size_t>(entries_.cols()) != col_marginal_.size()) {
    throw DimensionError("transport plan shape does not match its marginals");
  }
  if ((entries_.array() < 0.0).any()) throw InvariantError("transport plan has negative mass");
}

double TransportPlan::max_marginal_violation() const {
  const double rows = (entries_.rowwise().sum() - row_marginal_.weights()).cwiseAbs().maxCoeff();
  const double cols =
      (entries_.colwise().sum().transpose() - col_marginal_.weights()).cwiseAbs().maxCoeff();
  return std::max(rows, cols);
}

double TransportPlan::cost(const CostMatrix& cost) const {
  if (cost.rows() != rows() || cost.cols() != cols()) {
    throw DimensionError("plan/cost shape mismatch");
  }
  return (entries_.array() * cost.entries().array()).sum();
}

CostMatrix cosine_cost(const Matrix& a, const Matrix& b) {
  if (a.cols() < 1 || a.cols() != b.cols()) {
    throw DimensionError("cosine_cost: feature widths " + std::to_string(a.cols()) + " and " +
                         std::to_string(b.cols()) + " differ or are empty");
  }
  if (a.rows() < 1 || b.rows() < 1) throw DimensionError("cosine_cost: empty operand");
  const Vector na = row_norms(a, "A");
  const Vector nb = row_norms(b, "B");
  Matrix cos = (na.cwiseInverse().asDiagonal() * a) * (nb.cwiseInverse().asDiagonal() * b).transpose();
  Matrix entries = (1.0 - cos.array()).cwiseMax(0.0).cwiseMin(2.0).matrix();
  return CostMatrix(std::move(entries));
}

SinkhornResult sinkhorn_solve(const DiscreteDistribution& p, const DiscreteDistribution& q,
                              const CostMatrix& cost, const SinkhornOptions& options) {
  check_cost_shape(p, q, cost, "sinkhorn");
  if (!(options.epsilon > 0.0)) throw InvariantError("sinkhorn: epsilon must be positive");
  if (options.max_iters < 1) throw InvariantError("sinkhorn: max_iters must be positive");

  const Eigen::Index n = static_cast<Eigen::Index>(p.size());
  const Eigen::Index m = static_cast<Eigen::Index>(q.size());
  const double eps = options.epsilon;

  // Row-major copy for the row sweep, column-major for the column sweep.
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> scaled_rows =
      cost.entries() / eps;
  const Matrix scaled_cols = cost.entries() / eps;
  const Vector log_p = p.weights().array().log();
  const Vector log_q = q.weights().array().log();

  // Potentials are kept divided by epsilon.
  Vector f = Vector::Zero(n);
  Vector g = Vector::Zero(m);
  std::vector<double> buffer(static_cast<std::size_t>(std::max(n, m)));
  Vector row_lse(n);

  auto row_sweep = [&]() {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double* c = scaled_rows.data() + i * m;
      for (Eigen::Index j = 0; j < m; ++j) buffer[static_cast<std::size_t>(j)] = g(j) - c[j];
      row_lse(i) = log_sum_exp(buffer.data(), m);
    }
  };

  double violation = std::numeric_limits<double>::infinity();
  int iter = 0;
  for (; iter < options.max_iters; ++iter) {
    row_sweep();
    if (iter > 0) {
      // Columns are exact after the previous column sweep; measure the rows.
      violation = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double mass = std::isfinite(f(i)) ? std::exp(f(i) + row_lse(i)) : 0.0;
        violation = std::max(violation, std::abs(mass - p.weights()(i)));
      }
      if (!std::isfinite(violation)) throw NumericalError("sinkhorn: non-finite row mass");
      // Half the tolerance leaves room for rounding in the final recount.
      if (violation <= 0.5 * options.tol) break;
    }
    for (Eigen::Index i = 0; i < n; ++i) f(i) = log_p(i) - row_lse(i);
    for (Eigen::Index j = 0; j < m; ++j) {
      const double* c = scaled_cols.data() + j * n;
      for (Eigen::Index i = 0; i < n; ++i) buffer[static_cast<std::size_t>(i)] = f(i) - c[i];
      g(j) = log_q(j) - log_sum_exp(buffer.data(), n);
    }
    for (Eigen::Index j = 0; j < m; ++j) {
      if (std::isnan(g(j)) || g(j) == std::numeric_limits<double>::infinity()) {
        throw NumericalError("sinkhorn: non-finite dual potential");
      }
    }
  }

  Matrix plan(n, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      plan(i, j) = std::exp(f(i) + g(j) - scaled_cols(i, j));
    }
  }
  if (!plan.allFinite()) throw NumericalError("sinkhorn: non-finite plan entry");

  TransportPlan result(std::move(plan), p, q);
  const double achieved = result.max_marginal_violation();
  if (achieved > options.tol) throw ConvergenceError(achieved, iter);
  return SinkhornResult{std::move(result), iter, achieved};
}

namespace {

struct BasicCell {
  Eigen::Index row;
  Eigen::Index col;
  double flow;
};

// Transportation simplex over a spanning-tree basis of n + m - 1 cells.
// Tree nodes: rows are 0..n-1, columns are n..n+m-1.
class TransportationSimplex {
 public:
  TransportationSimplex(const Vector& supply, const Vector& demand, const Matrix& cost)
      : n_(supply.size()), m_(demand.size()), cost_(cost) {
    northwest_corner(supply, demand);
  }

  void solve() {
    const double scale = std::max(1.0, cost_.cwiseAbs().maxCoeff());
    const double tol = 1e-12 * scale;
    const long cap = 50L * (n_ + m_) * (n_ * m_) + 1000;
    for (long step = 0;; ++step) {
      if (step > cap) throw NumericalError("exact_ot: transportation simplex did not terminate");
      compute_duals();
      Eigen::Index enter_r = -1;
      Eigen::Index enter_c = -1;
      // Bland: the lowest row-major index with a negative reduced cost enters.
      for (Eigen::Index i = 0; i < n_ && enter_r < 0; ++i) {
        for (Eigen::Index j = 0; j < m_; ++j) {
          if (in_basis_(i, j)) continue;
          if (cost_(i, j) - u_(i) - v_(j) < -tol) {
            enter_r = i;
            enter_c = j;
            break;
          }
        }
      }
      if (enter_r < 0) return;
      pivot(enter_r, enter_c);
    }
  }

  Matrix plan() const {
    Matrix t = Matrix::Zero(n_, m_);
    for (const auto& cell : basis_) t(cell.row, cell.col) = std::max(0.0, cell.flow);
    return t;
  }

 private:
  void northwest_corner(const Vector& supply, const Vector& demand) {
    Vector ra = supply;
    Vector rb = demand;
    in_basis_ = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(n_, m_, false);
    Eigen::Index i = 0;
    Eigen::Index j = 0;
    while (true) {
      const double x = std::min(ra(i), rb(j));
      basis_.push_back({i, j, x});
      in_basis_(i, j) = true;
      ra(i) = std::max(0.0, ra(i) - x);
      rb(j) = std::max(0.0, rb(j) - x);
      if (i == n_ - 1 && j == m_ - 1) break;
      if (i == n_ - 1) {
        ++j;
      } else if (j == m_ - 1) {
        ++i;
      } else if (ra(i) <= rb(j)) {
        ++i;
      } else {
        ++j;
      }
    }
  }

  void build_adjacency() {
    adjacency_.assign(static_cast<std::size_t>(n_ + m_), {});
    for (std::size_t k = 0; k < basis_.size(); ++k) {
      adjacency_[static_cast<std::size_t>(basis_[k].row)].push_back(k);
      adjacency_[static_cast<std::size_t>(n_ + basis_[k].col)].push_back(k);
    }
  }

  Eigen::Index other_end(std::size_t cell, Eigen::Index node) const {
    const auto& c = basis_[cell];
    return node < n_ ? n_ + c.col : c.row;
  }

  void compute_duals() {
    build_adjacency();
    u_ = Vector::Zero(n_);
    v_ = Vector::Zero(m_);
    std::vector<bool> seen(static_cast<std::size_t>(n_ + m_), false);
    std::vector<Eigen::Index> stack{0};
    seen[0] = true;
    while (!stack.empty()) {
      const Eigen::Index node = stack.back();
      stack.pop_back();
      for (std::size_t k : adjacency_[static_cast<std::size_t>(node)]) {
        const Eigen::Index next = other_end(k, node);
        if (seen[static_cast<std::size_t>(next)]) continue;
        seen[static_cast<std::size_t>(next)] = true;
        const auto& c = basis_[k];
        if (next >= n_) {
          v_(c.col) = cost_(c.row, c.col) - u_(c.row);
        } else {
          u_(c.row) = cost_(c.row, c.col) - v_(c.col);
        }
        stack.push_back(next);
      }
    }
  }

  // Tree path from row node `r` to column node `n + c`, as basis cell indices
  // ordered from the column end back to the row end.
  std::vector<std::size_t> tree_path(Eigen::Index r, Eigen::Index c) const {
    const auto total = static_cast<std::size_t>(n_ + m_);
    std::vector<long> parent_cell(total, -1);
    std::vector<bool> seen(total, false);
    std::vector<Eigen::Index> stack{r};
    seen[static_cast<std::size_t>(r)] = true;
    const Eigen::Index target = n_ + c;
    while (!stack.empty()) {
      const Eigen::Index node = stack.back();
      stack.pop_back();
      if (node == target) break;
      for (std::size_t k : adjacency_[static_cast<std::size_t>(node)]) {
        const Eigen::Index next = other_end(k, node);
        if (seen[static_cast<std::size_t>(next)]) continue;
        seen[static_cast<std::size_t>(next)] = true;
        parent_cell[static_cast<std::size_t>(next)] = static_cast<long>(k);
        stack.push_back(next);
      }
    }
    std::vector<std::size_t> path;
    Eigen::Index node = target;
    while (node != r) {
      const long k = parent_cell[static_cast<std::size_t>(node)];
      if (k < 0) throw NumericalError("exact_ot: basis is not a spanning tree");
      path.push_back(static_cast<std::size_t>(k));
      node = other_end(static_cast<std::size_t>(k), node);
    }
    return path;
  }

  void pivot(Eigen::Index r, Eigen::Index c) {
    const std::vector<std::size_t> path = tree_path(r, c);
    // Entering cell takes +theta; path cells alternate -, +, -, ...
    double theta = std::numeric_limits<double>::infinity();
    std::size_t leaving = path.front();
    Eigen::Index leaving_index = std::numeric_limits<Eigen::Index>::max();
    for (std::size_t k = 0; k < path.size(); k += 2) {
      const auto& cell = basis_[path[k]];
      const Eigen::Index index = cell.row * m_ + cell.col;
      if (cell.flow < theta || (cell.flow == theta && index < leaving_index)) {
        theta = cell.flow;
        leaving = path[k];
        leaving_index = index;
      }
    }
    theta = std::max(0.0, theta);
    for (std::size_t k = 0; k < path.size(); ++k) {
      basis_[path[k]].flow += (k % 2 == 0) ? -theta : theta;
    }
    in_basis_(basis_[leaving].row, basis_[leaving].col) = false;
    basis_[leaving] = BasicCell{r, c, theta};
    in_basis_(r, c) = true;
  }

  Eigen::Index n_;
  Eigen::Index m_;
  const Matrix& cost_;
  std::vector<BasicCell> basis_;
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> in_basis_;
  std::vector<std::vector<std::size_t>> adjacency_;
  Vector u_;
  Vector v_;
};

}  // namespace

ExactOtResult exact_ot(const DiscreteDistribution& p, const DiscreteDistribution& q,
                       const CostMatrix& cost) {
  check_cost_shape(p, q, cost, "exact_ot");
  if (p.size() * q.size() > kExactOtCellCap) {
    throw SizeLimitError("exact_ot: instance has " + std::to_string(p.size() * q.size()) +
                         " cells, cap is " + std::to_string(kExactOtCellCap));
  }
  TransportationSimplex simplex(p.weights(), q.weights(), cost.entries());
  simplex.solve();
  TransportPlan plan(simplex.plan(), p, q);
  const double total = plan.cost(cost);
  return ExactOtResult{std::move(plan), total};
}

namespace {

std::pair<double, Matrix> ds_ot(const Matrix& xa, const DiscreteDistribution& wa,
                                const Matrix& xb, const DiscreteDistribution& wb,
                                const DivergenceOptions& options) {
  if (static_cast<std::size_t>(xa.rows()) != wa.size() ||
      static_cast<std::size_t>(xb.rows()) != wb.size()) {
    throw DimensionError("sinkhorn_divergence: weights do not match point counts");
  }
  const CostMatrix cost = cosine_cost(xa, xb);
  if (options.entropic) {
    TransportPlan plan = sinkhorn(wa, wb, cost, options.sinkhorn);
    const double value = plan.cost(cost);
    return {value, plan.entries()};
  }
  ExactOtResult exact = exact_ot(wa, wb, cost);
  return {exact.cost, exact.plan.entries()};
}

}  // namespace

DivergenceTerms sinkhorn_divergence_terms(const Matrix& xa, const DiscreteDistribution& wa,
                                          const Matrix& xb, const DiscreteDistribution& wb,
                                          const DivergenceOptions& options) {
  DivergenceTerms terms;
  std::tie(terms.cross, terms.plan_cross) = ds_ot(xa, wa, xb, wb, options);
  std::tie(terms.self_a, terms.plan_self_a) = ds_ot(xa, wa, xa, wa, options);
  std::tie(terms.self_b, terms.plan_self_b) = ds_ot(xb, wb, xb, wb, options);
  terms.value = terms.cross - 0.5 * terms.self_a - 0.5 * terms.self_b;
  return terms;
}

Matrix gradient_wrt_features(const Matrix& plan, const Matrix& xa, const Matrix& xb) {
  if (plan.rows() != xa.rows() || plan.cols() != xb.rows() || xa.cols() != xb.cols()) {
    throw DimensionError("gradient_wrt_features: plan/feature shapes disagree");
  }
  const Vector na = row_norms(xa, "Xa");
  const Vector nb = row_norms(xb, "Xb");
  const Matrix a_hat = na.cwiseInverse().asDiagonal() * xa;
  const Matrix b_hat = nb.cwiseInverse().asDiagonal() * xb;
  const Matrix cos = a_hat * b_hat.transpose();
  const Vector weighted_cos = (plan.array() * cos.array()).rowwise().sum();
  // d(1 - cos(a, b))/da = -(b_hat - cos * a_hat) / |a|
  Matrix grad = plan * b_hat - weighted_cos.asDiagonal() * a_hat;
  return -(na.cwiseInverse().asDiagonal() * grad);
}

Matrix divergence_gradient(const DivergenceTerms& terms, const Matrix& xa, const Matrix& xb) {
  Matrix grad = gradient_wrt_features(terms.plan_cross, xa, xb);
  grad -= 0.5 * gradient_wrt_features(terms.plan_self_a, xa, xa);
  grad -= 0.5 * gradient_wrt_features(terms.plan_self_a.transpose(), xa, xa);
  return grad;
}

OtInstance parse_ot_instance(const std::string& text) {
  std::istringstream in(text);
  std::size_t at = 0;
  auto next = [&](const char* what) {
    in >> std::ws;
    at = in.tellg() < 0 ? text.size() : static_cast<std::size_t>(in.tellg());
    double v = 0.0;
    if (!(in >> v)) throw FormatError(std::string("ot instance: expected ") + what, at);
    return v;
  };
  auto count = [&](const char* what) {
    const double v = next(what);
    if (v < 1 || v != std::floor(v) || v > 1e6) throw FormatError(std::string("ot instance: bad ") + what, at);
    return static_cast<Eigen::Index>(v);
  };
  const Eigen::Index n = count("row count");
  const Eigen::Index m = count("column count");
  const double epsilon = next("epsilon");
  Vector p(n), q(m);
  for (Eigen::Index i = 0; i < n; ++i) p(i) = next("row weight");
  for (Eigen::Index j = 0; j < m; ++j) q(j) = next("column weight");
  Matrix cost(n, m);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) cost(i, j) = next("cost entry");
  in >> std::ws;
  if (!in.eof()) throw FormatError("ot instance: trailing content", static_cast<std::size_t>(in.tellg()));
  return {DiscreteDistribution(p), DiscreteDistribution(q), CostMatrix(cost), epsilon};
}

}  // namespace affakt

