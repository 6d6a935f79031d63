#pragma once

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

namespace demspec {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

struct Tensor {
    std::string name;
    Matrix value;
    bool decay = true;  // subject to weight decay
};

// Ordered, name-addressable collection of parameter matrices. Gradients are a
// parallel ParamSet with identical names and shapes.
class ParamSet {
public:
    std::size_t add(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                    bool decay = true);
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    std::size_t index(const std::string& name) const;
    void remove_prefix(const std::string& prefix);

    Matrix& operator[](std::size_t i) { return tensors_[i].value; }
    const Matrix& operator[](std::size_t i) const { return tensors_[i].value; }
    Matrix& at(const std::string& name) { return tensors_[index(name)].value; }
    const Matrix& at(const std::string& name) const { return tensors_[index(name)].value; }

    std::size_t size() const { return tensors_.size(); }
    std::vector<Tensor>& tensors() { return tensors_; }
    const std::vector<Tensor>& tensors() const { return tensors_; }
    std::size_t scalar_count() const;

    ParamSet zeros_like() const;
    void set_zero();
    bool all_finite() const;

    // Versioned flat archive: magic, version, count, then per tensor
    // (name, rows, cols, decay flag, little-endian doubles).
    void save(const std::filesystem::path& path) const;
    static ParamSet load(const std::filesystem::path& path);

private:
    void reindex();

    std::vector<Tensor> tensors_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace demspec
