#ifndef NPNET_METRICS_HPP
#define NPNET_METRICS_HPP

#include <string>
#include <vector>

#include "npnet/model.hpp"
#include "npnet/tensor.hpp"
#include "npnet/trainer.hpp"

namespace npnet {

// Foreground class is 1.
struct ConfusionCounts {
    long long tp = 0;
    long long fp = 0;
    long long fn = 0;
    long long tn = 0;

    long long total() const { return tp + fp + fn + tn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        tn += o.tn;
        return *this;
    }
};

ConfusionCounts confusion(const LabelMap& pred, const LabelMap& truth);

struct IouDice {
    double iou = 0.0;
    double dice = 0.0;
};

// iou = tp/(tp+fp+fn), dice = 2tp/(2tp+fp+fn); both 1.0 when the image
// is empty and predicted empty (tp+fp+fn == 0).
IouDice iou_dice(const ConfusionCounts& counts);

struct ImageScore {
    std::string id;
    double iou = 0.0;
    double dice = 0.0;
};

struct MetricsReport {
    std::vector<ImageScore> per_image;
    double mean_iou = 0.0;    // headline: mean of per-image scores
    double mean_dice = 0.0;
    ConfusionCounts pooled;   // diagnostic: dataset-pooled confusion
    double pooled_iou = 0.0;
    double pooled_dice = 0.0;
};

// Aggregation rule, separated so it is testable without a model.
MetricsReport aggregate(std::vector<ImageScore> per_image,
                        const ConfusionCounts& pooled);

// Per-pixel argmax over the class dimension.
LabelMap argmax_classes(const Tensor& logits);

// Eval-mode forward per sample, argmax prediction, per-image and
// aggregate scores.
MetricsReport evaluate(Model& model, const std::vector<Sample>& test_set);

// Tab-separated: header, one row per image, then MEAN and POOLED rows.
std::string to_tsv(const MetricsReport& report);

}  // namespace npnet

#endif
