#ifndef NPNET_TRAINER_HPP
#define NPNET_TRAINER_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "npnet/model.hpp"
#include "npnet/tensor.hpp"

namespace npnet {

struct TrainConfig {
    int epochs = 100;
    float learning_rate = 1e-3f;
    int batch_size = 2;
    std::uint32_t seed = 0;
    float adam_beta1 = 0.9f;
    float adam_beta2 = 0.999f;
    float adam_epsilon = 1e-8f;
    std::string checkpoint_path;  // empty: no checkpoint written
    int checkpoint_every = 0;     // epochs between periodic saves; 0 = end only
    std::string log_path;         // empty: no log file
    bool echo = false;            // also print epoch lines to stdout

    void validate() const;
};

// One image/mask pair ready for the model.
struct Sample {
    std::string id;
    Tensor image;   // (1, c, h, w), values in [0, 1]
    LabelMap mask;  // (1, h, w)
};

// Standard Adam with bias correction; gradients are zeroed afterwards.
// t is the 1-based step index.
void adam_step(std::vector<Parameter>& params, long long t,
               const TrainConfig& config);

struct EpochLog {
    int epoch = 0;
    float mean_loss = 0.0f;
    double seconds = 0.0;
};

struct TrainResult {
    std::vector<EpochLog> log;
};

// Seeded-shuffle epoch loop: forward (train mode) -> cross entropy ->
// backward -> adam_step. Deterministic for a fixed (seed, data, config).
// Appends `epoch<TAB>mean_loss<TAB>seconds` lines to log_path when set
// and writes the checkpoint per config.
TrainResult train(Model& model, const std::vector<Sample>& dataset,
                  const TrainConfig& config);

}  // namespace npnet

#endif
