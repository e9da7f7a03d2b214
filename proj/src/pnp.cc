#include "tog/pnp.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <random>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>

namespace tog {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Relative eigenvalue thresholds of the centered 3D point scatter.
constexpr double kCollinearRatio = 1e-12;
constexpr double kPlanarRatio = 1e-8;

enum class PointLayout { kDegenerate, kPlanar, kGeneral };

struct PrincipalAxes {
  Eigen::Vector3d centroid;
  Eigen::Vector3d eigenvalues;   // ascending
  Eigen::Matrix3d eigenvectors;  // columns match eigenvalues
};

PrincipalAxes ComputePrincipalAxes(std::span<const Correspondence2D3D> corrs) {
  PrincipalAxes axes;
  axes.centroid.setZero();
  for (const auto& c : corrs) axes.centroid += c.target_point;
  axes.centroid /= static_cast<double>(corrs.size());
  Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
  for (const auto& c : corrs) {
    const Eigen::Vector3d d = c.target_point - axes.centroid;
    scatter += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(scatter);
  axes.eigenvalues = eig.eigenvalues().cwiseMax(0.0);
  axes.eigenvectors = eig.eigenvectors();
  return axes;
}

PointLayout ClassifyLayout(const PrincipalAxes& axes) {
  const Eigen::Vector3d& ev = axes.eigenvalues;
  if (!(ev(2) > 0.0) || ev(1) <= kCollinearRatio * ev(2)) {
    return PointLayout::kDegenerate;
  }
  if (ev(0) <= kPlanarRatio * ev(2)) {
    return PointLayout::kPlanar;
  }
  return PointLayout::kGeneral;
}

// Kabsch alignment: camera = R * world + t.
RigidTransformd AlignPointSets(std::span<const Eigen::Vector3d> world,
                               std::span<const Eigen::Vector3d> camera) {
  Eigen::Vector3d cw = Eigen::Vector3d::Zero();
  Eigen::Vector3d cc = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < world.size(); ++i) {
    cw += world[i];
    cc += camera[i];
  }
  cw /= static_cast<double>(world.size());
  cc /= static_cast<double>(world.size());
  Eigen::Matrix3d H = Eigen::Matrix3d::Zero();
  for (std::size_t i = 0; i < world.size(); ++i) {
    H += (camera[i] - cc) * (world[i] - cw).transpose();
  }
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(H, Eigen::ComputeFullU |
                                               Eigen::ComputeFullV);
  Eigen::Matrix3d D = Eigen::Matrix3d::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) {
    D(2, 2) = -1.0;
  }
  RigidTransformd tf;
  tf.rotation = svd.matrixU() * D * svd.matrixV().transpose();
  tf.translation = cc - tf.rotation * cw;
  return tf;
}

double TotalReprojectionError(std::span<const Correspondence2D3D> corrs,
                              const CameraIntrinsicsd& K,
                              const RigidTransformd& tf) {
  double total = 0.0;
  for (const auto& c : corrs) total += ReprojectionError(c, K, tf);
  return total;
}

double SquaredCost(std::span<const Correspondence2D3D> corrs,
                   const CameraIntrinsicsd& K, const RigidTransformd& tf) {
  double total = 0.0;
  for (const auto& c : corrs) {
    const Eigen::Vector3d p = tf.rotation * c.target_point + tf.translation;
    if (!(p.z() > 0.0)) return kInf;
    const Pixeld r = Project(K, p) - c.source_px;
    total += r.squaredNorm();
  }
  return total;
}

// EPnP with 3 (planar) or 4 control points. The camera-frame control points
// are a combination of the smallest right singular vectors of M; the
// coefficients (betas) are fixed by preserving control point distances.
class EPnPSolver {
 public:
  EPnPSolver(std::span<const Correspondence2D3D> corrs,
             const CameraIntrinsicsd& K)
      : corrs_(corrs), K_(K) {}

  std::optional<RigidTransformd> Solve() {
    if (corrs_.size() < 4) return std::nullopt;
    const PrincipalAxes axes = ComputePrincipalAxes(corrs_);
    const PointLayout layout = ClassifyLayout(axes);
    if (layout == PointLayout::kDegenerate) return std::nullopt;
    num_controls_ = layout == PointLayout::kPlanar ? 3 : 4;

    ChooseControlPoints(axes);
    ComputeAlphas();
    ComputeKernel();
    ComputeDistancePairs();

    std::optional<RigidTransformd> best;
    double best_error = kInf;
    const int max_dim = num_controls_;
    for (int dim = 1; dim <= max_dim; ++dim) {
      Eigen::VectorXd betas = InitialBetas(dim);
      RefineBetas(dim, betas);
      const auto tf = PoseFromBetas(dim, betas);
      if (!tf) continue;
      const double err = TotalReprojectionError(corrs_, K_, *tf);
      if (err < best_error) {
        best_error = err;
        best = tf;
      }
    }
    return best;
  }

 private:
  void ChooseControlPoints(const PrincipalAxes& axes) {
    const double n = static_cast<double>(corrs_.size());
    controls_[0] = axes.centroid;
    for (int j = 1; j < num_controls_; ++j) {
      const int axis = 3 - j;  // largest spread first
      controls_[j] = axes.centroid + std::sqrt(axes.eigenvalues(axis) / n) *
                                         axes.eigenvectors.col(axis);
    }
  }

  void ComputeAlphas() {
    // Control offsets are orthogonal, so barycentric coordinates are
    // projections onto each offset.
    alphas_.resize(corrs_.size());
    for (std::size_t i = 0; i < corrs_.size(); ++i) {
      const Eigen::Vector3d d = corrs_[i].target_point - controls_[0];
      Eigen::Vector4d a = Eigen::Vector4d::Zero();
      for (int j = 1; j < num_controls_; ++j) {
        const Eigen::Vector3d axis = controls_[j] - controls_[0];
        a(j) = axis.dot(d) / axis.squaredNorm();
      }
      a(0) = 1.0 - a.tail<3>().sum();
      alphas_[i] = a;
    }
  }

  void ComputeKernel() {
    const int cols = 3 * num_controls_;
    Eigen::MatrixXd MtM = Eigen::MatrixXd::Zero(cols, cols);
    Eigen::MatrixXd rows(2, cols);
    for (std::size_t i = 0; i < corrs_.size(); ++i) {
      const double x = (corrs_[i].source_px.x() - K_.cx) / K_.fx;
      const double y = (corrs_[i].source_px.y() - K_.cy) / K_.fy;
      rows.setZero();
      for (int j = 0; j < num_controls_; ++j) {
        const double a = alphas_[i](j);
        rows(0, 3 * j) = a;
        rows(0, 3 * j + 2) = -a * x;
        rows(1, 3 * j + 1) = a;
        rows(1, 3 * j + 2) = -a * y;
      }
      MtM.noalias() += rows.transpose() * rows;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(MtM);
    kernel_ = eig.eigenvectors();  // ascending eigenvalues
  }

  void ComputeDistancePairs() {
    pairs_.clear();
    for (int a = 0; a < num_controls_; ++a) {
      for (int b = a + 1; b < num_controls_; ++b) {
        pairs_.push_back({a, b, (controls_[a] - controls_[b]).squaredNorm()});
      }
    }
  }

  // Difference of control points a and b in kernel vector k.
  Eigen::Vector3d KernelDelta(int k, int a, int b) const {
    return kernel_.col(k).segment<3>(3 * a) - kernel_.col(k).segment<3>(3 * b);
  }

  Eigen::VectorXd InitialBetas(int dim) const {
    const int num_pairs = static_cast<int>(pairs_.size());
    Eigen::VectorXd betas = Eigen::VectorXd::Zero(dim);
    if (dim == 1) {
      double num = 0.0;
      double den = 0.0;
      for (const auto& p : pairs_) {
        const double dn = KernelDelta(0, p.a, p.b).norm();
        num += dn * std::sqrt(p.rho);
        den += dn * dn;
      }
      betas(0) = den > 0.0 ? num / den : 0.0;
      return betas;
    }

    // Linearize products beta_k * beta_l. When there are more products than
    // distance constraints, keep only beta_0 * beta_l.
    std::vector<std::pair<int, int>> monomials;
    for (int k = 0; k < dim; ++k) {
      for (int l = k; l < dim; ++l) monomials.emplace_back(k, l);
    }
    if (static_cast<int>(monomials.size()) > num_pairs) {
      monomials.clear();
      for (int l = 0; l < dim; ++l) monomials.emplace_back(0, l);
    }
    Eigen::MatrixXd L(num_pairs, static_cast<Eigen::Index>(monomials.size()));
    Eigen::VectorXd rho(num_pairs);
    for (int p = 0; p < num_pairs; ++p) {
      rho(p) = pairs_[p].rho;
      for (std::size_t m = 0; m < monomials.size(); ++m) {
        const auto [k, l] = monomials[m];
        const double dot = KernelDelta(k, pairs_[p].a, pairs_[p].b)
                               .dot(KernelDelta(l, pairs_[p].a, pairs_[p].b));
        L(p, Eigen::Index(m)) = (k == l ? 1.0 : 2.0) * dot;
      }
    }
    const Eigen::VectorXd b =
        L.jacobiSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(rho);

    // monomials[0] is (0, 0); every (0, l) is present in either layout.
    const double b00 = b(0);
    betas(0) = std::sqrt(std::abs(b00));
    if (betas(0) == 0.0) return betas;
    for (std::size_t m = 1; m < monomials.size(); ++m) {
      const auto [k, l] = monomials[m];
      if (k == 0) betas(l) = b(Eigen::Index(m)) / betas(0);
    }
    if (b00 < 0.0) betas.tail(dim - 1) *= -1.0;
    return betas;
  }

  // Gauss-Newton on |sum_k beta_k d_k|^2 = rho over all control pairs.
  void RefineBetas(int dim, Eigen::VectorXd& betas) const {
    const int num_pairs = static_cast<int>(pairs_.size());
    Eigen::MatrixXd J(num_pairs, dim);
    Eigen::VectorXd r(num_pairs);
    auto evaluate = [&](const Eigen::VectorXd& beta, bool with_jacobian) {
      double cost = 0.0;
      for (int p = 0; p < num_pairs; ++p) {
        Eigen::Vector3d d = Eigen::Vector3d::Zero();
        for (int k = 0; k < dim; ++k) {
          d += beta(k) * KernelDelta(k, pairs_[p].a, pairs_[p].b);
        }
        r(p) = d.squaredNorm() - pairs_[p].rho;
        cost += r(p) * r(p);
        if (with_jacobian) {
          for (int k = 0; k < dim; ++k) {
            J(p, k) = 2.0 * d.dot(KernelDelta(k, pairs_[p].a, pairs_[p].b));
          }
        }
      }
      return cost;
    };
    double cost = evaluate(betas, true);
    for (int iter = 0; iter < 10; ++iter) {
      const Eigen::VectorXd step = J.colPivHouseholderQr().solve(-r);
      if (!step.allFinite()) break;
      const Eigen::VectorXd candidate = betas + step;
      const double new_cost = evaluate(candidate, false);
      if (!(new_cost < cost)) break;
      betas = candidate;
      cost = evaluate(betas, true);
    }
  }

  std::optional<RigidTransformd> PoseFromBetas(
      int dim, const Eigen::VectorXd& betas) const {
    std::array<Eigen::Vector3d, 4> camera_controls;
    for (int j = 0; j < num_controls_; ++j) {
      camera_controls[j].setZero();
      for (int k = 0; k < dim; ++k) {
        camera_controls[j] += betas(k) * kernel_.col(k).segment<3>(3 * j);
      }
    }
    std::vector<Eigen::Vector3d> camera(corrs_.size());
    std::vector<Eigen::Vector3d> world(corrs_.size());
    double depth_sum = 0.0;
    for (std::size_t i = 0; i < corrs_.size(); ++i) {
      camera[i].setZero();
      for (int j = 0; j < num_controls_; ++j) {
        camera[i] += alphas_[i](j) * camera_controls[j];
      }
      world[i] = corrs_[i].target_point;
      depth_sum += camera[i].z();
    }
    if (depth_sum == 0.0 || !std::isfinite(depth_sum)) return std::nullopt;
    if (depth_sum < 0.0) {
      for (auto& p : camera) p = -p;
    }
    RigidTransformd tf = AlignPointSets(world, camera);
    if (!tf.rotation.allFinite() || !tf.translation.allFinite()) {
      return std::nullopt;
    }
    return tf;
  }

  struct DistancePair {
    int a;
    int b;
    double rho;
  };

  std::span<const Correspondence2D3D> corrs_;
  const CameraIntrinsicsd& K_;
  int num_controls_ = 4;
  std::array<Eigen::Vector3d, 4> controls_;
  std::vector<Eigen::Vector4d> alphas_;
  Eigen::MatrixXd kernel_;
  std::vector<DistancePair> pairs_;
};

Eigen::Matrix3d Skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d S;
  S << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return S;
}

Eigen::Matrix3d Orthonormalize(const Eigen::Matrix3d& R) {
  return Eigen::Quaterniond(R).normalized().toRotationMatrix();
}

std::vector<int> FindInliers(std::span<const Correspondence2D3D> corrs,
                             const CameraIntrinsicsd& K,
                             const RigidTransformd& tf, double threshold,
                             double* error_sum) {
  std::vector<int> inliers;
  double sum = 0.0;
  for (std::size_t i = 0; i < corrs.size(); ++i) {
    const double e = ReprojectionError(corrs[i], K, tf);
    if (e < threshold) {
      inliers.push_back(static_cast<int>(i));
      sum += e;
    }
  }
  if (error_sum != nullptr) *error_sum = sum;
  return inliers;
}

std::vector<Correspondence2D3D> Subset(std::span<const Correspondence2D3D> corrs,
                                       const std::vector<int>& indices) {
  std::vector<Correspondence2D3D> out;
  out.reserve(indices.size());
  for (const int i : indices) out.push_back(corrs[std::size_t(i)]);
  return out;
}

}  // namespace

double ReprojectionError(const Correspondence2D3D& c,
                         const CameraIntrinsicsd& K,
                         const RigidTransformd& tf) {
  const Eigen::Vector3d p = tf.rotation * c.target_point + tf.translation;
  if (!(p.z() > 0.0)) return kInf;
  return (Project(K, p) - c.source_px).norm();
}

std::optional<RigidTransformd> EstimatePoseEPnP(
    std::span<const Correspondence2D3D> corrs, const CameraIntrinsicsd& K) {
  return EPnPSolver(corrs, K).Solve();
}

PoseRefinementSummary RefinePose(std::span<const Correspondence2D3D> corrs,
                                 const CameraIntrinsicsd& K,
                                 const RigidTransformd& initial,
                                 const PnPOptions& options) {
  PoseRefinementSummary summary;
  summary.transform = initial;
  double cost = SquaredCost(corrs, K, initial);
  summary.cost_history.push_back(cost);
  if (!std::isfinite(cost)) return summary;

  using Matrix6d = Eigen::Matrix<double, 6, 6>;
  using Vector6d = Eigen::Matrix<double, 6, 1>;
  double lambda = options.lm_initial_lambda;

  auto build_normal_equations = [&](const RigidTransformd& tf, Matrix6d& A,
                                    Vector6d& g) {
    A.setZero();
    g.setZero();
    for (const auto& c : corrs) {
      const Eigen::Vector3d rotated = tf.rotation * c.target_point;
      const Eigen::Vector3d p = rotated + tf.translation;
      const double iz = 1.0 / p.z();
      Eigen::Matrix<double, 2, 3> dproj;
      dproj << K.fx * iz, 0, -K.fx * p.x() * iz * iz, 0, K.fy * iz,
          -K.fy * p.y() * iz * iz;
      Eigen::Matrix<double, 3, 6> dp;
      dp.leftCols<3>() = -Skew(rotated);
      dp.rightCols<3>().setIdentity();
      const Eigen::Matrix<double, 2, 6> J = dproj * dp;
      const Eigen::Vector2d r =
          Eigen::Vector2d(K.fx * p.x() * iz + K.cx, K.fy * p.y() * iz + K.cy) -
          c.source_px;
      A.noalias() += J.transpose() * J;
      g.noalias() += J.transpose() * r;
    }
  };

  Matrix6d A;
  Vector6d g;
  build_normal_equations(summary.transform, A, g);
  for (int iter = 0; iter < options.lm_max_iterations; ++iter) {
    summary.iterations = iter + 1;
    if (cost == 0.0) {
      summary.converged = true;
      break;
    }
    const Vector6d diag = A.diagonal().cwiseMax(1e-12 * A.diagonal().maxCoeff());
    Matrix6d damped = A;
    damped.diagonal() += lambda * diag;
    const Vector6d step = damped.ldlt().solve(-g);
    if (!step.allFinite()) break;

    RigidTransformd candidate;
    candidate.rotation =
        Orthonormalize(RotationFromAxisAngle<double>(step.head<3>()) *
                       summary.transform.rotation);
    candidate.translation = summary.transform.translation + step.tail<3>();
    const double new_cost = SquaredCost(corrs, K, candidate);

    if (new_cost < cost) {
      summary.transform = candidate;
      cost = new_cost;
      summary.cost_history.push_back(cost);
      lambda = std::max(lambda / 10.0, 1e-15);
      if (step.norm() < options.lm_min_step_norm) {
        summary.converged = true;
        break;
      }
      build_normal_equations(summary.transform, A, g);
    } else {
      if (step.norm() < options.lm_min_step_norm) {
        summary.converged = true;
        break;
      }
      lambda *= 10.0;
      if (lambda > 1e16) {
        summary.converged = true;
        break;
      }
    }
  }
  return summary;
}

PnPResult SolvePnP(std::span<const Correspondence2D3D> corrs,
                   const CameraIntrinsicsd& K, const PnPOptions& options) {
  const int n = static_cast<int>(corrs.size());
  if (n < 4) {
    throw Error(ErrorCode::kInsufficientCorrespondences,
                "PnP needs at least 4 correspondences, got " +
                    std::to_string(n));
  }
  if (ClassifyLayout(ComputePrincipalAxes(corrs)) == PointLayout::kDegenerate) {
    throw Error(ErrorCode::kDegenerateConfiguration,
                "3D points are coincident or collinear");
  }

  constexpr int kSampleSize = 4;
  std::mt19937_64 rng(options.ransac_seed);
  std::vector<int> indices(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) indices[std::size_t(i)] = i;

  std::optional<RigidTransformd> best_model;
  std::size_t best_count = 0;
  double best_error = kInf;
  int valid_hypotheses = 0;
  int max_iterations = options.ransac_max_iterations;
  std::array<Correspondence2D3D, kSampleSize> sample;

  for (int iter = 0; iter < max_iterations; ++iter) {
    // Partial Fisher-Yates shuffle picks the first kSampleSize indices.
    for (int s = 0; s < kSampleSize; ++s) {
      std::uniform_int_distribution<int> pick(s, n - 1);
      std::swap(indices[std::size_t(s)], indices[std::size_t(pick(rng))]);
      sample[std::size_t(s)] = corrs[std::size_t(indices[std::size_t(s)])];
    }
    const auto model = EstimatePoseEPnP(sample, K);
    if (!model) continue;
    ++valid_hypotheses;

    double error = 0.0;
    const auto inliers =
        FindInliers(corrs, K, *model, options.ransac_threshold_px, &error);
    if (inliers.size() > best_count ||
        (inliers.size() == best_count && inliers.size() > 0 &&
         error < best_error)) {
      best_count = inliers.size();
      best_error = error;
      best_model = model;

      const double inlier_ratio = double(best_count) / n;
      const double p_good = std::pow(inlier_ratio, kSampleSize);
      if (p_good >= 1.0) {
        max_iterations = std::min(max_iterations, iter + 1);
      } else if (p_good > 0.0) {
        const double needed = std::log(1.0 - options.ransac_confidence) /
                              std::log(1.0 - p_good);
        if (needed < max_iterations) {
          max_iterations = std::max(iter + 1, static_cast<int>(std::ceil(needed)));
        }
      }
    }
  }

  if (valid_hypotheses == 0) {
    throw Error(ErrorCode::kDegenerateConfiguration,
                "no minimal sample produced a well-conditioned pose");
  }
  // Chance alignments of four or five unrelated pairs are common at an 8 px
  // threshold, so the consensus set must also be a minimum share of the data.
  const std::size_t min_inliers = std::max<std::size_t>(
      kSampleSize,
      static_cast<std::size_t>(std::ceil(options.ransac_min_inlier_ratio * n)));
  if (!best_model || best_count < min_inliers) {
    throw Error(ErrorCode::kNoConsensus,
                "best hypothesis has " + std::to_string(best_count) +
                    " inliers, need " + std::to_string(min_inliers));
  }

  std::vector<int> inliers =
      FindInliers(corrs, K, *best_model, options.ransac_threshold_px, nullptr);
  RigidTransformd pose = *best_model;
  {
    // A non-minimal EPnP on the consensus set is usually a better start.
    const auto inlier_corrs = Subset(corrs, inliers);
    if (const auto refit = EstimatePoseEPnP(inlier_corrs, K)) {
      if (SquaredCost(inlier_corrs, K, *refit) <
          SquaredCost(inlier_corrs, K, pose)) {
        pose = *refit;
      }
    }
  }
  for (int round = 0; round < 3; ++round) {
    const auto inlier_corrs = Subset(corrs, inliers);
    pose = RefinePose(inlier_corrs, K, pose, options).transform;
    auto updated =
        FindInliers(corrs, K, pose, options.ransac_threshold_px, nullptr);
    if (updated == inliers) break;
    inliers = std::move(updated);
    if (inliers.size() < min_inliers) break;
  }
  if (inliers.size() < min_inliers) {
    throw Error(ErrorCode::kNoConsensus, "refined pose lost its inliers");
  }

  PnPResult result;
  result.transform = pose;
  result.inlier_indices = inliers;
  double sum = 0.0;
  for (const int i : inliers) {
    sum += ReprojectionError(corrs[std::size_t(i)], K, pose);
  }
  result.mean_reprojection_error = sum / static_cast<double>(inliers.size());
  return result;
}

}  // namespace tog
