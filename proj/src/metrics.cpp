#include "pdnet/metrics.hpp"

#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace pdnet {

ConfusionMatrix::ConfusionMatrix(int classes) : classes_(classes) {
    if (classes < 1) throw std::invalid_argument("ConfusionMatrix: classes >= 1");
    counts_.assign(static_cast<std::size_t>(classes) * classes, 0);
}

void ConfusionMatrix::accumulate(const std::int32_t* gt, const std::int32_t* pred, std::size_t n,
                                 std::int32_t ignore) {
    for (std::size_t i = 0; i < n; ++i) {
        if (gt[i] == ignore) continue;
        if (gt[i] < 0 || gt[i] >= classes_)
            throw std::invalid_argument("ConfusionMatrix: ground-truth label out of range");
        if (pred[i] == ignore) continue;
        if (pred[i] < 0 || pred[i] >= classes_)
            throw std::invalid_argument("ConfusionMatrix: predicted label out of range");
        ++counts_[static_cast<std::size_t>(gt[i]) * classes_ + pred[i]];
    }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.classes_ != classes_)
        throw std::invalid_argument("ConfusionMatrix: merge class count mismatch");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::int64_t ConfusionMatrix::total() const {
    return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0});
}

MetricSummary compute_metrics(const ConfusionMatrix& cm) {
    const int C = cm.classes();
    const std::int64_t total = cm.total();
    if (total == 0) throw std::invalid_argument("compute_metrics: empty confusion matrix");

    MetricSummary m;
    m.per_class_iou.assign(C, -1.0);
    std::int64_t trace = 0;
    double iou_sum = 0.0, acc_sum = 0.0;
    int iou_classes = 0, acc_classes = 0;
    for (int c = 0; c < C; ++c) {
        std::int64_t row = 0, col = 0;
        for (int j = 0; j < C; ++j) {
            row += cm.at(c, j);
            col += cm.at(j, c);
        }
        const std::int64_t tp = cm.at(c, c);
        trace += tp;
        if (row + col == 0) continue;  // class never seen; excluded
        const double iou = static_cast<double>(tp) / static_cast<double>(row + col - tp);
        m.per_class_iou[c] = iou;
        iou_sum += iou;
        ++iou_classes;
        if (row > 0) {
            acc_sum += static_cast<double>(tp) / static_cast<double>(row);
            ++acc_classes;
        }
    }
    m.miou = iou_classes > 0 ? iou_sum / iou_classes : 0.0;
    m.macc = acc_classes > 0 ? acc_sum / acc_classes : 0.0;
    m.oa = static_cast<double>(trace) / static_cast<double>(total);
    return m;
}

std::string metrics_to_json(const std::string& modality, const MetricSummary& m) {
    nlohmann::json j;
    j["modality"] = modality;
    j["mIoU"] = m.miou;
    j["mAcc"] = m.macc;
    j["OA"] = m.oa;
    nlohmann::json per = nlohmann::json::array();
    for (double v : m.per_class_iou) {
        if (v < 0)
            per.push_back(nullptr);
        else
            per.push_back(v);
    }
    j["per_class_iou"] = std::move(per);
    return j.dump();
}

}  // namespace pdnet
