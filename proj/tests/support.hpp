#pragma once

// Shared fixtures for the test binaries.

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <sys/wait.h>

#include <Eigen/Core>
#include <httplib.h>

#include "chbr/core.hpp"
#include "chbr/embedding.hpp"
#include "chbr/likelihood.hpp"

namespace chbr::testing {

class TempDir {
   public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("chbr-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string file(const std::string& name) const { return (path_ / name).string(); }
    const std::filesystem::path& path() const { return path_; }

   private:
    std::filesystem::path path_;
};

inline std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void spit(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
}

inline Eigen::VectorXf random_unit(std::mt19937_64& rng, Eigen::Index dim) {
    std::normal_distribution<float> n(0.0f, 1.0f);
    Eigen::VectorXf v(dim);
    for (Eigen::Index k = 0; k < dim; ++k) v(k) = n(rng);
    return normalize(v);
}

inline std::vector<ClassLabel> make_classes(std::size_t k) {
    std::vector<ClassLabel> out;
    for (std::size_t i = 0; i < k; ++i) out.push_back({"c" + std::to_string(i), "Class " + std::to_string(i)});
    return out;
}

// Bank with the given concept counts; weights drawn in (0, 1] unless `unit`.
inline ConceptBank random_bank(std::mt19937_64& rng, const std::vector<std::size_t>& counts, bool unit = false) {
    std::uniform_real_distribution<double> u(0.05, 1.0);
    ConceptBank bank;
    bank.task_name = "fixture";
    bank.classes = make_classes(counts.size());
    for (std::size_t i = 0; i < counts.size(); ++i) {
        std::vector<WeightedConcept> list;
        for (std::size_t j = 0; j < counts[i]; ++j) {
            WeightedConcept wc;
            wc.item = {"concept " + std::to_string(i) + "-" + std::to_string(j), bank.classes[i].id, j};
            wc.success_rate = unit ? 1.0 : u(rng);
            wc.importance_weight = wc.success_rate;
            list.push_back(wc);
        }
        bank.concepts.push_back(std::move(list));
    }
    return bank;
}

inline SimilarityTensor random_sims(std::mt19937_64& rng, const std::vector<std::size_t>& counts, std::size_t views) {
    std::uniform_real_distribution<double> u(-0.2, 0.45);
    SimilarityTensor s;
    for (auto m : counts) {
        Eigen::MatrixXd mat(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(views));
        for (Eigen::Index r = 0; r < mat.rows(); ++r)
            for (Eigen::Index c = 0; c < mat.cols(); ++c) mat(r, c) = u(rng);
        s.per_class.push_back(std::move(mat));
    }
    return s;
}

struct RunResult {
    int exit_code = -1;
    std::string out;
};

// Runs a shell command, capturing stdout; stderr goes to `err_path` when set.
inline RunResult run(const std::string& cmd, const std::string& err_path = "/dev/null") {
    RunResult r;
    FILE* pipe = ::popen((cmd + " 2>" + err_path).c_str(), "r");
    if (!pipe) return r;
    char buf[4096];
    for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, pipe)) > 0;) r.out.append(buf, n);
    const int status = ::pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

// In-process HTTP server on an ephemeral localhost port.
class FakeServer {
   public:
    using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

    explicit FakeServer(const std::string& path, Handler handler) {
        server_.Post(path, std::move(handler));
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~FakeServer() {
        server_.stop();
        thread_.join();
    }

    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

   private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

}  // namespace chbr::testing
