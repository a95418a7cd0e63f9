#include "ssc/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace ssc {

namespace {

double ratio(std::size_t num, std::size_t den) {
  if (den == 0) return 1.0;  // empty region
  return static_cast<double>(num) / static_cast<double>(den);
}

void check_shapes(const TensorU8& pred, const TensorU8& gt, const TensorU8& vis) {
  if (pred.shape() != gt.shape() || vis.shape() != gt.shape()) {
    throw std::invalid_argument("metrics: grid mismatch (pred " + shape_to_string(pred.shape()) + ", gt " +
                                shape_to_string(gt.shape()) + ", visibility " + shape_to_string(vis.shape()) +
                                ")");
  }
}

bool in_frustum(std::uint8_t s) {
  return s == static_cast<std::uint8_t>(VoxelState::ObservedFree) ||
         s == static_cast<std::uint8_t>(VoxelState::ObservedSurface) ||
         s == static_cast<std::uint8_t>(VoxelState::Occluded);
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

MetricsAccumulator::MetricsAccumulator(std::size_t num_classes)
    : num_classes_(num_classes), tp_(num_classes), fp_(num_classes), fn_(num_classes) {
  if (num_classes < 1 || num_classes > 254) throw std::invalid_argument("num_classes must be in 1..254");
}

void MetricsAccumulator::add(const TensorU8& pred, const TensorU8& gt, const TensorU8& vis) {
  check_shapes(pred, gt, vis);
  const std::uint8_t occluded = static_cast<std::uint8_t>(VoxelState::Occluded);
  for (std::size_t v = 0; v < gt.size(); ++v) {
    const std::uint8_t g = gt[v];
    if (g == kUnlabeled || !in_frustum(vis[v])) continue;
    const std::uint8_t p = pred[v];
    if (g > num_classes_) throw std::invalid_argument("metrics: gt label " + std::to_string(g) + " > num_classes");
    if (p > num_classes_) throw std::invalid_argument("metrics: predicted label " + std::to_string(p) + " > num_classes");
    ++frustum_;
    if (vis[v] == occluded) {
      ++occluded_;
      const bool po = p != 0, go = g != 0;
      sc_tp_ += po && go;
      sc_fp_ += po && !go;
      sc_fn_ += !po && go;
    }
    if (p == g) {
      if (g != 0) ++tp_[g - 1];
    } else {
      if (p != 0) ++fp_[p - 1];
      if (g != 0) ++fn_[g - 1];
    }
  }
}

ScMetrics MetricsAccumulator::sc() const {
  ScMetrics m;
  m.tp = sc_tp_;
  m.fp = sc_fp_;
  m.fn = sc_fn_;
  m.precision = ratio(m.tp, m.tp + m.fp);
  m.recall = ratio(m.tp, m.tp + m.fn);
  m.iou = ratio(m.tp, m.tp + m.fp + m.fn);
  return m;
}

SscMetrics MetricsAccumulator::ssc() const {
  SscMetrics m;
  m.tp = tp_;
  m.fp = fp_;
  m.fn = fn_;
  m.class_iou.resize(num_classes_);
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t k = 0; k < num_classes_; ++k) {
    const std::size_t den = tp_[k] + fp_[k] + fn_[k];
    if (den == 0) continue;
    m.class_iou[k] = static_cast<double>(tp_[k]) / static_cast<double>(den);
    sum += *m.class_iou[k];
    ++present;
  }
  m.miou = present ? sum / static_cast<double>(present) : 1.0;
  return m;
}

ScMetrics sc_metrics(const TensorU8& pred, const TensorU8& gt, const TensorU8& visibility) {
  // class range is irrelevant for the binary task
  MetricsAccumulator acc(254);
  acc.add(pred, gt, visibility);
  return acc.sc();
}

SscMetrics ssc_metrics(const TensorU8& pred, const TensorU8& gt, const TensorU8& visibility,
                       std::size_t num_classes) {
  MetricsAccumulator acc(num_classes);
  acc.add(pred, gt, visibility);
  return acc.ssc();
}

MetricsReport MetricsReport::from(const MetricsAccumulator& acc) {
  MetricsReport r;
  const ScMetrics sc = acc.sc();
  const SscMetrics ssc = acc.ssc();
  r.sc_precision = sc.precision;
  r.sc_recall = sc.recall;
  r.sc_iou = sc.iou;
  r.class_iou = ssc.class_iou;
  r.ssc_miou = ssc.miou;
  r.occluded_voxels = acc.occluded_voxels();
  r.frustum_voxels = acc.frustum_voxels();
  return r;
}

std::string MetricsReport::to_text() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "SC-precision=" << sc_precision << "\n";
  os << "SC-recall=" << sc_recall << "\n";
  os << "SC-IoU=" << sc_iou << "\n";
  for (std::size_t k = 0; k < class_iou.size(); ++k) {
    os << "class " << (k + 1) << " IoU=";
    if (class_iou[k]) os << *class_iou[k];
    else os << "n/a";
    os << "\n";
  }
  os << "SSC-mIoU=" << ssc_miou << "\n";
  os << "occluded voxels=" << occluded_voxels << " frustum voxels=" << frustum_voxels << "\n";
  return os.str();
}

std::string MetricsReport::to_csv() const {
  std::ostringstream os;
  os << "class,iou\n";
  for (std::size_t k = 0; k < class_iou.size(); ++k)
    os << (k + 1) << ',' << (class_iou[k] ? fmt(*class_iou[k]) : std::string("nan")) << "\n";
  os << "SC-precision," << fmt(sc_precision) << "\n";
  os << "SC-recall," << fmt(sc_recall) << "\n";
  os << "SC-IoU," << fmt(sc_iou) << "\n";
  os << "SSC-mIoU," << fmt(ssc_miou) << "\n";
  return os.str();
}

MetricsReport MetricsReport::parse_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "class,iou") throw std::invalid_argument("metrics CSV: missing header");
  MetricsReport r;
  bool seen[4] = {false, false, false, false};
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw std::invalid_argument("metrics CSV line " + std::to_string(lineno) + ": expected two fields");
    }
    const std::string key = line.substr(0, comma), val = line.substr(comma + 1);
    auto num = [&] { return parse_double(val, "metrics CSV line " + std::to_string(lineno)); };
    if (key == "SC-precision") r.sc_precision = num(), seen[0] = true;
    else if (key == "SC-recall") r.sc_recall = num(), seen[1] = true;
    else if (key == "SC-IoU") r.sc_iou = num(), seen[2] = true;
    else if (key == "SSC-mIoU") r.ssc_miou = num(), seen[3] = true;
    else {
      const long long k = parse_int(key, "metrics CSV class id");
      if (k != static_cast<long long>(r.class_iou.size()) + 1) {
        throw std::invalid_argument("metrics CSV line " + std::to_string(lineno) + ": classes out of order");
      }
      if (val == "nan") r.class_iou.emplace_back(std::nullopt);
      else r.class_iou.emplace_back(num());
    }
  }
  for (bool s : seen)
    if (!s) throw std::invalid_argument("metrics CSV: missing summary row");
  return r;
}

}  // namespace ssc
