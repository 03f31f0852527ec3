// End-to-end CLI workflow on a generated fixture dataset:
// train -> eval -> predict -> gradcheck, checking outputs and exit codes.

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "npnet/dataio.hpp"
#include "testutil.hpp"

namespace fs = std::filesystem;

namespace {

int failures = 0;

void expect(bool ok, const std::string& what) {
    std::printf("%s: %s\n", ok ? "ok" : "FAIL", what.c_str());
    if (!ok) ++failures;
}

int run_cli(const std::string& args, const std::string& out_path) {
    std::string cmd = std::string(NPNET_CLI_PATH) + " " + args + " > " +
                      out_path + " 2>&1";
    int status = std::system(cmd.c_str());
    if (status == -1) return -1;
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

}  // namespace

int main() {
    testutil::TempDir dir("workflow");
    fs::create_directories(dir.path() / "data/images");
    fs::create_directories(dir.path() / "data/masks");
    auto samples = testutil::make_rectangle_samples(6, 32, 32, 314);
    for (int i = 0; i < 6; ++i) {
        std::string name = "w" + std::to_string(i) + ".png";
        npnet::write_rgb_png(samples[i].image,
                             (dir.path() / "data/images" / name).string());
        npnet::write_mask_png(samples[i].mask,
                              (dir.path() / "data/masks" / name).string());
    }
    const std::string data = dir.str() + "/data";
    const std::string ckpt = dir.str() + "/model.npnt";
    const std::string log = dir.str() + "/out.txt";

    int code = run_cli("train --data-dir " + data +
                           " --epochs 3 --batch-size 2 --seed 5 --widths "
                           "8,16,32 --reduction 8 --out " +
                           ckpt + " --log " + dir.str() + "/train.log",
                       log);
    expect(code == 0, "train exits 0");
    expect(fs::exists(ckpt), "train writes the checkpoint");
    {
        std::ifstream train_log(dir.str() + "/train.log");
        int lines = 0;
        std::string line;
        while (std::getline(train_log, line)) ++lines;
        expect(lines == 3, "training log has one line per epoch");
    }

    const std::string report = dir.str() + "/report.tsv";
    code = run_cli("eval --ckpt " + ckpt + " --data-dir " + data +
                       " --seed 5 --report " + report,
                   log);
    expect(code == 0, "eval exits 0");
    {
        std::string tsv = read_file(report);
        expect(tsv.rfind("image\tiou\tdice", 0) == 0,
               "eval report has the TSV header");
        expect(tsv.find("\nMEAN\t") != std::string::npos &&
                   tsv.find("\nPOOLED\t") != std::string::npos,
               "eval report has MEAN and POOLED rows");
        // 6 samples, 80/20 split -> 2 test rows (floor(0.8*6)=4 train)
        int rows = 0;
        std::istringstream in(tsv);
        std::string line;
        while (std::getline(in, line)) ++rows;
        expect(rows == 1 + 2 + 2, "eval report row count matches the split");
    }

    const std::string mask = dir.str() + "/mask.png";
    const std::string overlay = dir.str() + "/overlay.png";
    code = run_cli("predict --ckpt " + ckpt + " --input " + data +
                       "/images/w0.png --out " + mask + " --overlay " +
                       overlay,
                   log);
    expect(code == 0, "predict exits 0");
    expect(fs::exists(mask) && fs::exists(overlay),
           "predict writes mask and overlay");
    {
        // outputs decode and have the input size; mask is binary
        auto spec = std::optional<std::pair<int, int>>{};
        npnet::Tensor m = npnet::load_image_tensor(mask, spec);
        expect(m.h() == 32 && m.w() == 32, "predicted mask matches input size");
        bool binary = true;
        for (std::size_t i = 0; i < m.size(); ++i) {
            binary = binary && (m[i] == 0.0f || m[i] == 1.0f);
        }
        expect(binary, "predicted mask is binary");
    }

    // identical invocation reproduces the checkpoint byte for byte
    const std::string ckpt2 = dir.str() + "/model2.npnt";
    code = run_cli("train --data-dir " + data +
                       " --epochs 3 --batch-size 2 --seed 5 --widths "
                       "8,16,32 --reduction 8 --out " +
                       ckpt2,
                   log);
    expect(code == 0 && read_file(ckpt) == read_file(ckpt2),
           "identical train invocations produce identical checkpoints");

    code = run_cli("gradcheck --seed 0", log);
    expect(code == 0, "gradcheck exits 0 on the default seed");

    std::printf("%d failures\n", failures);
    return failures;
}
