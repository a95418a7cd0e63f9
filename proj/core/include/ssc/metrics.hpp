#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ssc/tensor.hpp"
#include "ssc/voxel.hpp"

namespace ssc {

struct ScMetrics {
  std::size_t tp = 0, fp = 0, fn = 0;
  double precision = 1.0, recall = 1.0, iou = 1.0;
};

struct SscMetrics {
  std::vector<std::size_t> tp, fp, fn;          // index k-1 for class k = 1..N
  std::vector<std::optional<double>> class_iou;  // nullopt: absent from gt and pred
  double miou = 1.0;
};

/// Binary completion over occluded voxels with gt != 255. Anything nonzero
/// in `pred` counts as occupied, so occupancy-head argmax works as well.
ScMetrics sc_metrics(const TensorU8& pred, const TensorU8& gt, const TensorU8& visibility);

/// Per-class IoU over in-frustum voxels (free, surface, occluded) with gt != 255.
SscMetrics ssc_metrics(const TensorU8& pred, const TensorU8& gt, const TensorU8& visibility,
                       std::size_t num_classes);

/// Integer counts summed over several volumes.
class MetricsAccumulator {
 public:
  explicit MetricsAccumulator(std::size_t num_classes);
  void add(const TensorU8& pred, const TensorU8& gt, const TensorU8& visibility);
  ScMetrics sc() const;
  SscMetrics ssc() const;
  std::size_t occluded_voxels() const { return occluded_; }
  std::size_t frustum_voxels() const { return frustum_; }
  std::size_t num_classes() const { return num_classes_; }

 private:
  std::size_t num_classes_;
  std::size_t sc_tp_ = 0, sc_fp_ = 0, sc_fn_ = 0;
  std::vector<std::size_t> tp_, fp_, fn_;
  std::size_t occluded_ = 0, frustum_ = 0;
};

struct MetricsReport {
  double sc_precision = 1.0, sc_recall = 1.0, sc_iou = 1.0;
  std::vector<std::optional<double>> class_iou;
  double ssc_miou = 1.0;
  std::size_t occluded_voxels = 0, frustum_voxels = 0;

  static MetricsReport from(const MetricsAccumulator& acc);
  std::string to_text() const;
  /// `class,iou` rows (absent classes as nan) then SC-precision, SC-recall,
  /// SC-IoU, SSC-mIoU rows.
  std::string to_csv() const;
  static MetricsReport parse_csv(const std::string& text);
};

}  // namespace ssc
