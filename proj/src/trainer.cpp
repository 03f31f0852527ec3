#include "npnet/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "npnet/checkpoint.hpp"
#include "npnet/errors.hpp"
#include "npnet/ops.hpp"
#include "npnet/rng.hpp"

namespace npnet {

void TrainConfig::validate() const {
    if (epochs < 1) {
        throw ConfigError("epochs must be >= 1, got " + std::to_string(epochs));
    }
    if (batch_size < 1) {
        throw ConfigError("batch_size must be >= 1, got " +
                          std::to_string(batch_size));
    }
    if (!(learning_rate > 0.0f)) {
        throw ConfigError("learning_rate must be > 0");
    }
}

void adam_step(std::vector<Parameter>& params, long long t,
               const TrainConfig& config) {
    if (t < 1) {
        throw ConfigError("adam_step: step index must be >= 1 (bias "
                          "correction is undefined at t=0)");
    }
    const float b1 = config.adam_beta1;
    const float b2 = config.adam_beta2;
    const float correction1 =
        1.0f - static_cast<float>(std::pow(static_cast<double>(b1), t));
    const float correction2 =
        1.0f - static_cast<float>(std::pow(static_cast<double>(b2), t));
    const float lr = config.learning_rate;
    const float eps = config.adam_epsilon;

    for (Parameter& p : params) {
        float* w = p.value.data();
        float* g = p.grad.data();
        float* m = p.adam_m.data();
        float* v = p.adam_v.data();
        const std::int64_t total = static_cast<std::int64_t>(p.value.size());
#pragma omp parallel for schedule(static)
        for (std::int64_t i = 0; i < total; ++i) {
            m[i] = b1 * m[i] + (1.0f - b1) * g[i];
            v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
            float m_hat = m[i] / correction1;
            float v_hat = v[i] / correction2;
            w[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
            g[i] = 0.0f;
        }
    }
}

namespace {

void check_dataset(const std::vector<Sample>& dataset) {
    if (dataset.empty()) throw DataError("training dataset is empty");
    const Shape& first = dataset.front().image.shape();
    for (const Sample& s : dataset) {
        const Shape& is = s.image.shape();
        if (is.c != first.c || is.h != first.h || is.w != first.w) {
            throw DataError("sample '" + s.id + "' has image shape " +
                            is.str() + ", expected " + first.str());
        }
        if (s.mask.h != is.h || s.mask.w != is.w || s.mask.n != is.n) {
            std::ostringstream msg;
            msg << "sample '" << s.id << "' mask " << s.mask.h << "x"
                << s.mask.w << " does not match image " << is.h << "x" << is.w;
            throw DataError(msg.str());
        }
    }
}

Tensor stack_images(const std::vector<Sample>& dataset,
                    const std::vector<std::size_t>& order, std::size_t begin,
                    std::size_t end) {
    const Shape& one = dataset[order[begin]].image.shape();
    Tensor batch(static_cast<int>(end - begin), one.c, one.h, one.w);
    const std::size_t stride = one.count();
    for (std::size_t i = begin; i < end; ++i) {
        const Tensor& img = dataset[order[i]].image;
        float* dst = batch.data() + (i - begin) * stride;
        for (std::size_t j = 0; j < stride; ++j) dst[j] = img[j];
    }
    return batch;
}

LabelMap stack_masks(const std::vector<Sample>& dataset,
                     const std::vector<std::size_t>& order, std::size_t begin,
                     std::size_t end) {
    const LabelMap& one = dataset[order[begin]].mask;
    LabelMap batch(static_cast<int>(end - begin), one.h, one.w);
    const std::size_t stride = one.size();
    for (std::size_t i = begin; i < end; ++i) {
        const LabelMap& m = dataset[order[i]].mask;
        for (std::size_t j = 0; j < stride; ++j) {
            batch.data[(i - begin) * stride + j] = m.data[j];
        }
    }
    return batch;
}

}  // namespace

TrainResult train(Model& model, const std::vector<Sample>& dataset,
                  const TrainConfig& config) {
    config.validate();
    check_dataset(dataset);

    std::ofstream log_file;
    if (!config.log_path.empty()) {
        log_file.open(config.log_path, std::ios::app);
        if (!log_file) {
            throw DataError("cannot open training log: " + config.log_path);
        }
    }

    TrainResult result;
    const std::size_t n = dataset.size();
    long long step = 0;

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        auto start = std::chrono::steady_clock::now();

        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(mix_seed(config.seed, static_cast<std::uint32_t>(epoch)));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        std::size_t sample_count = 0;
        for (std::size_t begin = 0; begin < n;
             begin += static_cast<std::size_t>(config.batch_size)) {
            std::size_t end =
                std::min(n, begin + static_cast<std::size_t>(config.batch_size));
            Tensor images = stack_images(dataset, order, begin, end);
            LabelMap masks = stack_masks(dataset, order, begin, end);

            Tensor logits = model.forward(images, BnMode::Train);
            CrossEntropyResult ce = softmax_cross_entropy(logits, masks);
            if (!std::isfinite(ce.loss)) {
                std::ostringstream msg;
                msg << "non-finite loss at epoch " << epoch << ", batch index "
                    << begin / config.batch_size << " (first sample '"
                    << dataset[order[begin]].id << "')";
                throw NumericError(msg.str());
            }
            model.backward(ce.grad_logits);
            ++step;
            adam_step(model.params(), step, config);

            loss_sum += static_cast<double>(ce.loss) *
                        static_cast<double>(end - begin);
            sample_count += end - begin;
        }

        auto elapsed = std::chrono::duration<double>(
                           std::chrono::steady_clock::now() - start)
                           .count();
        EpochLog entry;
        entry.epoch = epoch;
        entry.mean_loss =
            static_cast<float>(loss_sum / static_cast<double>(sample_count));
        entry.seconds = elapsed;
        result.log.push_back(entry);

        char line[128];
        std::snprintf(line, sizeof(line), "%d\t%.6f\t%.3f", entry.epoch,
                      entry.mean_loss, entry.seconds);
        if (log_file) log_file << line << "\n" << std::flush;
        if (config.echo) std::printf("%s\n", line);

        if (!config.checkpoint_path.empty() && config.checkpoint_every > 0 &&
            epoch % config.checkpoint_every == 0) {
            save_checkpoint(model, config.checkpoint_path);
        }
    }

    if (!config.checkpoint_path.empty()) {
        save_checkpoint(model, config.checkpoint_path);
    }
    return result;
}

}  // namespace npnet
