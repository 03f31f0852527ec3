#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "npnet/checkpoint.hpp"
#include "npnet/dataio.hpp"
#include "npnet/errors.hpp"
#include "npnet/gradcheck.hpp"
#include "npnet/metrics.hpp"
#include "npnet/model.hpp"
#include "npnet/trainer.hpp"

using namespace npnet;

namespace {

// "WxH" -> (h, w)
std::pair<int, int> parse_size(const std::string& text) {
    auto x = text.find('x');
    if (x == std::string::npos) {
        throw ConfigError("size '" + text + "' must look like WxH");
    }
    try {
        int w = std::stoi(text.substr(0, x));
        int h = std::stoi(text.substr(x + 1));
        return {h, w};
    } catch (const std::exception&) {
        throw ConfigError("cannot parse size '" + text + "'");
    }
}

std::vector<int> parse_int_list(const std::string& text, std::size_t count,
                                const char* what) {
    std::vector<int> values;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            values.push_back(std::stoi(item));
        } catch (const std::exception&) {
            throw ConfigError(std::string("cannot parse ") + what + " '" +
                              text + "'");
        }
    }
    if (values.size() != count) {
        throw ConfigError(std::string(what) + " needs " +
                          std::to_string(count) + " comma-separated values");
    }
    return values;
}

struct ModelFlags {
    std::string widths = "32,64,128";
    std::string attention = "cam";
    std::string dilations = "1,5,15,20";
    int reduction = 16;
    int classes = 2;

    ModelConfig to_config() const {
        ModelConfig cfg;
        auto w = parse_int_list(widths, 3, "widths");
        cfg.widths = {w[0], w[1], w[2]};
        auto d = parse_int_list(dilations, 4, "dilations");
        cfg.dilation_rates = {d[0], d[1], d[2], d[3]};
        cfg.attention = attention_from_string(attention);
        cfg.reduction = reduction;
        cfg.num_classes = classes;
        cfg.validate();
        return cfg;
    }
};

void add_model_flags(CLI::App* cmd, ModelFlags& flags) {
    cmd->add_option("--widths", flags.widths, "stage widths c1,c2,c3");
    cmd->add_option("--attention", flags.attention,
                    "attention variant: none, se or cam");
    cmd->add_option("--dilations", flags.dilations,
                    "context module dilation rates r1,r2,r3,r4");
    cmd->add_option("--reduction", flags.reduction,
                    "attention bottleneck reduction");
    cmd->add_option("--classes", flags.classes, "number of classes");
}

struct DataFlags {
    std::string data_dir;
    std::string layout = "generic";
    std::string target_size;
    float split_fraction = 0.8f;

    DatasetSpec to_spec(std::uint32_t seed) const {
        DatasetSpec spec;
        spec.root = data_dir;
        spec.layout = layout_from_string(layout);
        if (!target_size.empty()) spec.target_size = parse_size(target_size);
        spec.split_fraction = split_fraction;
        spec.split_seed = seed;
        spec.validate();
        return spec;
    }
};

void add_data_flags(CLI::App* cmd, DataFlags& flags) {
    cmd->add_option("--data-dir", flags.data_dir, "dataset root directory")
        ->required();
    cmd->add_option("--layout", flags.layout,
                    "dataset layout: cvc, skin, luna or generic");
    cmd->add_option("--target-size", flags.target_size,
                    "resize inputs to WxH (multiples of 8)");
    cmd->add_option("--split-fraction", flags.split_fraction,
                    "train fraction of the random split");
}

// Dataset-specific defaults, applied only where the user left the flag
// untouched: cvc lr 1e-4 batch 2 native size; skin lr 1e-3 batch 4
// 224x224; luna lr 1e-3 batch 2 native size.
void apply_layout_presets(const CLI::App* cmd, const std::string& layout,
                          float* lr, int* batch, std::string* target_size) {
    if (lr && cmd->count("--lr") == 0) {
        *lr = layout == "cvc" ? 1e-4f : 1e-3f;
    }
    if (batch && cmd->count("--batch-size") == 0) {
        *batch = layout == "skin" ? 4 : 2;
    }
    if (target_size && cmd->count("--target-size") == 0 && layout == "skin") {
        *target_size = "224x224";
    }
}

IndexResult index_with_warnings(const DatasetSpec& spec) {
    IndexResult index = index_dataset(spec);
    for (const std::string& warning : index.warnings) {
        std::cerr << "warning: " << warning << "\n";
    }
    return index;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << content;
}

std::string format_cost_report(const CostReport& report, bool tsv) {
    std::ostringstream out;
    char line[256];
    if (tsv) {
        out << "layer\tkind\tin\tout\tk\ts\td\tp\tout_h\tout_w\tparams\tmacs\n";
        for (const LayerCost& l : report.layers) {
            std::snprintf(line, sizeof(line),
                          "%s\t%s\t%d\t%d\t%d\t%d\t%d\t%d\t%d\t%d\t%lld\t%lld",
                          l.name.c_str(), l.kind.c_str(), l.in_ch, l.out_ch,
                          l.kernel, l.stride, l.dilation, l.padding, l.out_h,
                          l.out_w, l.params, l.macs);
            out << line << "\n";
        }
        std::snprintf(line, sizeof(line), "TOTAL\t\t\t\t\t\t\t\t\t\t%lld\t%lld",
                      report.total_params, report.total_macs);
        out << line << "\n";
    } else {
        std::snprintf(line, sizeof(line), "%-22s %-6s %5s %5s %2s %2s %3s %3s %6s %6s %10s %14s",
                      "layer", "kind", "in", "out", "k", "s", "d", "p",
                      "out_h", "out_w", "params", "macs");
        out << line << "\n";
        for (const LayerCost& l : report.layers) {
            std::snprintf(line, sizeof(line),
                          "%-22s %-6s %5d %5d %2d %2d %3d %3d %6d %6d %10lld %14lld",
                          l.name.c_str(), l.kind.c_str(), l.in_ch, l.out_ch,
                          l.kernel, l.stride, l.dilation, l.padding, l.out_h,
                          l.out_w, l.params, l.macs);
            out << line << "\n";
        }
        std::snprintf(line, sizeof(line),
                      "TOTAL: %lld params (%.3f M), %lld MACs (%.3f G)",
                      report.total_params, report.total_params / 1e6,
                      report.total_macs, report.total_macs / 1e9);
        out << line << "\n";
    }
    return out.str();
}

const char* ablation_label(AttentionKind kind) {
    switch (kind) {
        case AttentionKind::None: return "no";
        case AttentionKind::Se: return "senet";
        case AttentionKind::Cam: return "cam";
    }
    return "no";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"npnet: pooling-free semantic segmentation network"};
    app.require_subcommand(1);

    // ---- train ----------------------------------------------------------
    auto* train_cmd = app.add_subcommand("train", "train a model");
    DataFlags train_data;
    ModelFlags train_model;
    TrainConfig train_cfg;
    std::string train_out = "model.npnt";
    std::uint32_t train_seed = 0;
    add_data_flags(train_cmd, train_data);
    add_model_flags(train_cmd, train_model);
    train_cmd->add_option("--epochs", train_cfg.epochs, "training epochs");
    train_cmd->add_option("--lr", train_cfg.learning_rate, "learning rate");
    train_cmd->add_option("--batch-size", train_cfg.batch_size, "batch size");
    train_cmd->add_option("--seed", train_seed, "random seed");
    train_cmd->add_option("--out", train_out, "checkpoint output path");
    train_cmd->add_option("--log", train_cfg.log_path, "training log path");
    train_cmd->add_option("--checkpoint-every", train_cfg.checkpoint_every,
                          "save every N epochs (0: only at the end)");
    train_cmd->set_config("--config");
    train_cmd->callback([&] {
        apply_layout_presets(train_cmd, train_data.layout,
                             &train_cfg.learning_rate, &train_cfg.batch_size,
                             &train_data.target_size);
        DatasetSpec spec = train_data.to_spec(train_seed);
        IndexResult index = index_with_warnings(spec);
        split_records(index.records, spec.split_fraction, spec.split_seed);
        std::vector<Sample> samples = load_split(index, spec, Split::Train);
        std::printf("training on %zu samples (%zu indexed)\n", samples.size(),
                    index.records.size());

        Model model = build_npnet(train_model.to_config(), train_seed);
        train_cfg.seed = train_seed;
        train_cfg.checkpoint_path = train_out;
        train_cfg.echo = true;
        train(model, samples, train_cfg);
        std::printf("checkpoint written to %s\n", train_out.c_str());
    });

    // ---- eval -----------------------------------------------------------
    auto* eval_cmd = app.add_subcommand("eval", "evaluate the seeded test split");
    DataFlags eval_data;
    std::string eval_ckpt;
    std::string eval_report;
    std::uint32_t eval_seed = 0;
    eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
    add_data_flags(eval_cmd, eval_data);
    eval_cmd->add_option("--seed", eval_seed,
                         "split seed (must match training)");
    eval_cmd->add_option("--report", eval_report, "write the TSV report here");
    eval_cmd->set_config("--config");
    eval_cmd->callback([&] {
        apply_layout_presets(eval_cmd, eval_data.layout, nullptr, nullptr,
                             &eval_data.target_size);
        Model model = load_checkpoint(eval_ckpt);
        DatasetSpec spec = eval_data.to_spec(eval_seed);
        IndexResult index = index_with_warnings(spec);
        split_records(index.records, spec.split_fraction, spec.split_seed);
        std::vector<Sample> samples = load_split(index, spec, Split::Test);
        MetricsReport report = evaluate(model, samples);
        std::string tsv = to_tsv(report);
        if (eval_report.empty()) {
            std::fputs(tsv.c_str(), stdout);
        } else {
            write_text_file(eval_report, tsv);
            std::printf("report written to %s\n", eval_report.c_str());
        }
    });

    // ---- predict --------------------------------------------------------
    auto* predict_cmd = app.add_subcommand("predict", "segment one image");
    std::string predict_ckpt, predict_input, predict_out, predict_overlay;
    std::string predict_size;
    predict_cmd->add_option("--ckpt", predict_ckpt, "checkpoint path")
        ->required();
    predict_cmd->add_option("--input", predict_input, "input image")
        ->required();
    predict_cmd->add_option("--out", predict_out, "output mask PNG")
        ->required();
    predict_cmd->add_option("--overlay", predict_overlay,
                            "optional overlay PNG");
    predict_cmd->add_option("--target-size", predict_size,
                            "resize the input to WxH before inference");
    predict_cmd->callback([&] {
        Model model = load_checkpoint(predict_ckpt);
        std::optional<std::pair<int, int>> target;
        if (!predict_size.empty()) target = parse_size(predict_size);
        Tensor image = load_image_tensor(predict_input, target);
        Tensor logits = model.forward(image, BnMode::Eval);
        LabelMap mask = argmax_classes(logits);
        write_mask_png(mask, predict_out);
        if (!predict_overlay.empty()) {
            write_overlay_png(image, mask, predict_overlay);
        }
    });

    // ---- analyze --------------------------------------------------------
    auto* analyze_cmd =
        app.add_subcommand("analyze", "per-layer parameter and MAC table");
    ModelFlags analyze_model;
    std::string analyze_size = "224x224";
    std::string analyze_format = "text";
    add_model_flags(analyze_cmd, analyze_model);
    analyze_cmd->add_option("--input-size", analyze_size, "input size WxH");
    analyze_cmd->add_option("--format", analyze_format, "text or tsv")
        ->check(CLI::IsMember({"text", "tsv"}));
    analyze_cmd->callback([&] {
        Model model = build_npnet(analyze_model.to_config(), 0);
        auto [h, w] = parse_size(analyze_size);
        CostReport report = count_macs(model, h, w);
        std::fputs(format_cost_report(report, analyze_format == "tsv").c_str(),
                   stdout);
    });

    // ---- ablate ---------------------------------------------------------
    auto* ablate_cmd = app.add_subcommand(
        "ablate", "train the three attention variants on a shared split");
    DataFlags ablate_data;
    ModelFlags ablate_model;
    TrainConfig ablate_cfg;
    std::uint32_t ablate_seed = 0;
    std::string ablate_out;
    add_data_flags(ablate_cmd, ablate_data);
    add_model_flags(ablate_cmd, ablate_model);
    ablate_cmd->add_option("--epochs", ablate_cfg.epochs, "training epochs");
    ablate_cmd->add_option("--lr", ablate_cfg.learning_rate, "learning rate");
    ablate_cmd->add_option("--batch-size", ablate_cfg.batch_size, "batch size");
    ablate_cmd->add_option("--seed", ablate_seed, "random seed");
    ablate_cmd->add_option("--out", ablate_out, "write the TSV table here");
    ablate_cmd->set_config("--config");
    ablate_cmd->callback([&] {
        apply_layout_presets(ablate_cmd, ablate_data.layout,
                             &ablate_cfg.learning_rate,
                             &ablate_cfg.batch_size,
                             &ablate_data.target_size);
        DatasetSpec spec = ablate_data.to_spec(ablate_seed);
        IndexResult index = index_with_warnings(spec);
        split_records(index.records, spec.split_fraction, spec.split_seed);
        std::vector<Sample> train_set = load_split(index, spec, Split::Train);
        std::vector<Sample> test_set = load_split(index, spec, Split::Test);

        std::ostringstream table;
        table << "attention\tiou\tdice\n";
        for (AttentionKind kind :
             {AttentionKind::None, AttentionKind::Se, AttentionKind::Cam}) {
            ModelFlags flags = ablate_model;
            flags.attention = to_string(kind);
            Model model = build_npnet(flags.to_config(), ablate_seed);
            TrainConfig cfg = ablate_cfg;
            cfg.seed = ablate_seed;
            std::printf("[%s] training...\n", ablation_label(kind));
            train(model, train_set, cfg);
            MetricsReport report = evaluate(model, test_set);
            char row[128];
            std::snprintf(row, sizeof(row), "%s\t%.4f\t%.4f",
                          ablation_label(kind), report.mean_iou,
                          report.mean_dice);
            table << row << "\n";
        }
        std::fputs(table.str().c_str(), stdout);
        if (!ablate_out.empty()) write_text_file(ablate_out, table.str());
    });

    // ---- gradcheck ------------------------------------------------------
    auto* gradcheck_cmd =
        app.add_subcommand("gradcheck", "finite-difference gradient report");
    std::uint32_t gradcheck_seed = 0;
    gradcheck_cmd->add_option("--seed", gradcheck_seed, "random seed");
    gradcheck_cmd->callback([&] {
        GradCheckReport report = run_gradcheck(gradcheck_seed);
        std::fputs(report.to_text().c_str(), stdout);
        if (!report.all_passed()) {
            throw NumericError("gradient check failed");
        }
        std::printf("all operators passed\n");
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
