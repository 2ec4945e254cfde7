#pragma once

#include <Eigen/Dense>

namespace chp {

/// Pipe mass flow per pipe and period (kg/s). Flattened index is
/// t * pipes + j, i.e. periods outer and pipes inner.
class FlowSchedule {
 public:
  FlowSchedule() = default;
  FlowSchedule(Eigen::Index pipes, Eigen::Index periods) : m_(Eigen::MatrixXd::Zero(pipes, periods)) {}
  explicit FlowSchedule(Eigen::MatrixXd m) : m_(std::move(m)) {}

  static FlowSchedule from_flat(const Eigen::Ref<const Eigen::VectorXd>& v, Eigen::Index pipes) {
    const Eigen::Index periods = pipes == 0 ? 0 : v.size() / pipes;
    return FlowSchedule(Eigen::Map<const Eigen::MatrixXd>(v.data(), pipes, periods));
  }

  Eigen::Index pipes() const { return m_.rows(); }
  Eigen::Index periods() const { return m_.cols(); }
  Eigen::Index size() const { return m_.size(); }
  static Eigen::Index flat_index(Eigen::Index pipe, Eigen::Index period, Eigen::Index pipes) {
    return period * pipes + pipe;
  }

  double operator()(Eigen::Index pipe, Eigen::Index period) const { return m_(pipe, period); }
  double& operator()(Eigen::Index pipe, Eigen::Index period) { return m_(pipe, period); }

  /// Column of flows at one period (0-based).
  auto period(Eigen::Index t) const { return m_.col(t); }

  Eigen::VectorXd flat() const { return Eigen::Map<const Eigen::VectorXd>(m_.data(), m_.size()); }
  const Eigen::MatrixXd& matrix() const { return m_; }
  Eigen::MatrixXd& matrix() { return m_; }

 private:
  Eigen::MatrixXd m_;
};

}  // namespace chp
