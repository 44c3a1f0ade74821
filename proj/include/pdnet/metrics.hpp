#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pdnet {

// Rows are ground truth, columns are predictions; the ignore sentinel is
// dropped at accumulation time.
class ConfusionMatrix {
  public:
    explicit ConfusionMatrix(int classes);

    void accumulate(const std::int32_t* gt, const std::int32_t* pred, std::size_t n,
                    std::int32_t ignore);
    void merge(const ConfusionMatrix& other);

    int classes() const { return classes_; }
    std::int64_t at(int gt, int pred) const { return counts_[gt * classes_ + pred]; }
    std::int64_t& at(int gt, int pred) { return counts_[gt * classes_ + pred]; }
    std::int64_t total() const;

  private:
    int classes_;
    std::vector<std::int64_t> counts_;
};

struct MetricSummary {
    double miou = 0.0;
    double macc = 0.0;
    double oa = 0.0;
    std::vector<double> per_class_iou;       // -1 for excluded classes
};

// IoU_c = TP/(TP+FP+FN); Acc_c = TP/row_c. Classes absent from both gt and
// prediction are excluded from both means; classes absent from gt only are
// excluded from mAcc (their recall is undefined) but keep IoU 0 in mIoU.
// Throws std::invalid_argument on an empty matrix.
MetricSummary compute_metrics(const ConfusionMatrix& cm);

std::string metrics_to_json(const std::string& modality, const MetricSummary& m);

}  // namespace pdnet
