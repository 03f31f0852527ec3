#include "npnet/metrics.hpp"

#include <cstdio>
#include <sstream>

#include "npnet/errors.hpp"

namespace npnet {

ConfusionCounts confusion(const LabelMap& pred, const LabelMap& truth) {
    if (pred.n != truth.n || pred.h != truth.h || pred.w != truth.w) {
        std::ostringstream msg;
        msg << "confusion: prediction " << pred.n << "x" << pred.h << "x"
            << pred.w << " vs truth " << truth.n << "x" << truth.h << "x"
            << truth.w;
        throw ShapeError(msg.str());
    }
    ConfusionCounts counts;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        bool p = pred.data[i] != 0;
        bool t = truth.data[i] != 0;
        if (p && t) {
            ++counts.tp;
        } else if (p && !t) {
            ++counts.fp;
        } else if (!p && t) {
            ++counts.fn;
        } else {
            ++counts.tn;
        }
    }
    return counts;
}

IouDice iou_dice(const ConfusionCounts& counts) {
    IouDice result;
    const long long denom = counts.tp + counts.fp + counts.fn;
    if (denom == 0) {
        // empty truth, empty prediction: correct emptiness scores 1
        result.iou = 1.0;
        result.dice = 1.0;
        return result;
    }
    result.iou = static_cast<double>(counts.tp) / static_cast<double>(denom);
    result.dice = 2.0 * static_cast<double>(counts.tp) /
                  static_cast<double>(counts.tp + denom);
    return result;
}

MetricsReport aggregate(std::vector<ImageScore> per_image,
                        const ConfusionCounts& pooled) {
    MetricsReport report;
    report.per_image = std::move(per_image);
    double iou_sum = 0.0, dice_sum = 0.0;
    for (const ImageScore& s : report.per_image) {
        iou_sum += s.iou;
        dice_sum += s.dice;
    }
    const double n = static_cast<double>(report.per_image.size());
    if (n > 0) {
        report.mean_iou = iou_sum / n;
        report.mean_dice = dice_sum / n;
    }
    report.pooled = pooled;
    IouDice pooled_scores = iou_dice(pooled);
    report.pooled_iou = pooled_scores.iou;
    report.pooled_dice = pooled_scores.dice;
    return report;
}

LabelMap argmax_classes(const Tensor& logits) {
    LabelMap out(logits.n(), logits.h(), logits.w());
    const int classes = logits.c();
    const std::size_t plane =
        static_cast<std::size_t>(logits.h()) * logits.w();
    for (int n = 0; n < logits.n(); ++n) {
        for (std::size_t p = 0; p < plane; ++p) {
            std::size_t base =
                static_cast<std::size_t>(n) * classes * plane + p;
            int best = 0;
            float best_value = logits[base];
            for (int k = 1; k < classes; ++k) {
                float v = logits[base + k * plane];
                if (v > best_value) {
                    best_value = v;
                    best = k;
                }
            }
            out.data[n * plane + p] = best;
        }
    }
    return out;
}

MetricsReport evaluate(Model& model, const std::vector<Sample>& test_set) {
    if (test_set.empty()) throw DataError("evaluation set is empty");
    std::vector<ImageScore> scores;
    scores.reserve(test_set.size());
    ConfusionCounts pooled;
    for (const Sample& sample : test_set) {
        Tensor logits = model.forward(sample.image, BnMode::Eval);
        LabelMap pred = argmax_classes(logits);
        ConfusionCounts counts = confusion(pred, sample.mask);
        pooled += counts;
        IouDice scored = iou_dice(counts);
        scores.push_back({sample.id, scored.iou, scored.dice});
    }
    return aggregate(std::move(scores), pooled);
}

std::string to_tsv(const MetricsReport& report) {
    std::ostringstream out;
    char line[256];
    out << "image\tiou\tdice\n";
    for (const ImageScore& s : report.per_image) {
        std::snprintf(line, sizeof(line), "%s\t%.6f\t%.6f", s.id.c_str(),
                      s.iou, s.dice);
        out << line << "\n";
    }
    std::snprintf(line, sizeof(line), "MEAN\t%.6f\t%.6f", report.mean_iou,
                  report.mean_dice);
    out << line << "\n";
    std::snprintf(line, sizeof(line), "POOLED\t%.6f\t%.6f", report.pooled_iou,
                  report.pooled_dice);
    out << line << "\n";
    return out.str();
}

}  // namespace npnet
