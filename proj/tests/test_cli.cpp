#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"

namespace {

struct Result {
    int code;
    std::string output;
};

/// Runs the CLI with stderr folded into the captured output.
Result mft(const std::string& args) {
    const std::string cmd = std::string(MFT_CLI) + " " + args + " 2>&1";
    FILE* p = ::popen(cmd.c_str(), "r");
    REQUIRE(p != nullptr);
    std::string out;
    std::array<char, 4096> buf;
    size_t n;
    while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0) out.append(buf.data(), n);
    const int status = ::pclose(p);
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

struct Dir {
    std::filesystem::path path;
    Dir() {
        path = std::filesystem::temp_directory_path() / ("mft_cli_" + std::to_string(::getpid()));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
        std::ofstream c(path / "corpus.txt");
        for (int i = 0; i < 30; ++i) c << "one two three four five six seven eight nine ten. ";
    }
    ~Dir() { std::filesystem::remove_all(path); }
    std::string operator/(const char* s) const { return (path / s).string(); }
};

}  // namespace

TEST_CASE("help and argument errors") {
    auto r = mft("--help");
    CHECK(r.code == 0);
    CHECK(r.output.find("finetune") != std::string::npos);
    CHECK(mft("").code != 0);
    CHECK(mft("finetune --no-such-flag 1").code != 0);
    auto bad = mft("finetune --set nonsense");
    CHECK(bad.code == 1);
    CHECK(bad.output.find("error [config]") != std::string::npos);
    auto unknown = mft("finetune --set colour=red");
    CHECK(unknown.code == 1);
    CHECK(unknown.output.find("colour") != std::string::npos);
}

TEST_CASE("init, finetune, eval and generate from the command line") {
    Dir d;
    auto init = mft("init --model " + (d / "m.safetensors") + " --d-model 32 --layers 1 --max-seq-len 32");
    REQUIRE(init.code == 0);
    CHECK(init.output.find("parameters") != std::string::npos);

    std::ofstream(d.path / "run.conf") << "# training run\nseq_len = 16\nbatch_size = 4\nsteps_per_epoch = 4\nlr = 0.001\n";
    auto ft = mft("finetune -c " + (d / "run.conf") + " --model " + (d / "m.safetensors") + " --dataset " +
                  (d / "corpus.txt") + " -o " + (d / "out") + " --set eval_every=2");
    INFO(ft.output);
    REQUIRE(ft.code == 0);
    CHECK(ft.output.find("step 4/4") != std::string::npos);
    const std::string resolved = slurp(d.path / "out" / "resolved.conf");
    CHECK(resolved.find("lr = 0.001") != std::string::npos);
    CHECK(resolved.find("eval_every = 2") != std::string::npos);

    auto ev = mft("eval --model " + (d / "out/model.safetensors") + " --dataset " + (d / "corpus.txt") + " --seq-len 16");
    CHECK(ev.code == 0);
    CHECK(ev.output.find("\"ppl\":") != std::string::npos);

    auto gen = mft("generate --model " + (d / "out/model.safetensors") + " --prompt 'one two' --max-new 6");
    CHECK(gen.code == 0);
    CHECK(gen.output.rfind("one two", 0) == 0);

    auto quiet = mft("finetune -q -c " + (d / "run.conf") + " --model " + (d / "m.safetensors") + " --dataset " +
                     (d / "corpus.txt") + " -o " + (d / "out2"));
    CHECK(quiet.code == 0);
    CHECK(quiet.output.find("step 1/") == std::string::npos);

    auto missing = mft("eval --model " + (d / "absent.safetensors") + " --dataset " + (d / "corpus.txt"));
    CHECK(missing.code == 1);
    CHECK(missing.output.find("error [load]") != std::string::npos);
}
