#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace privlm {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;

// A named rows x cols block inside a flat parameter vector.
struct ParamSlot {
  std::string name;
  Eigen::Index offset = 0;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;

  Eigen::Index size() const { return rows * cols; }

  MatMap view(Vec& flat) const { return MatMap(flat.data() + offset, rows, cols); }
  ConstMatMap view(const Vec& flat) const {
    return ConstMatMap(flat.data() + offset, rows, cols);
  }
};

// All trainable tensors of a network stored contiguously, so optimizers,
// clipping and finite-difference probes work on a single vector.
class ParamLayout {
 public:
  ParamSlot add(std::string name, Eigen::Index rows, Eigen::Index cols) {
    ParamSlot slot{std::move(name), total_, rows, cols};
    total_ += slot.size();
    slots_.push_back(slot);
    return slot;
  }

  Eigen::Index total() const { return total_; }
  const std::vector<ParamSlot>& slots() const { return slots_; }

 private:
  std::vector<ParamSlot> slots_;
  Eigen::Index total_ = 0;
};

}  // namespace privlm
