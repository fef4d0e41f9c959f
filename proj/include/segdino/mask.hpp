#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "segdino/error.hpp"

namespace segdino {

/// Row-major grid of class labels.
struct Mask {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::int32_t> labels;

    Mask() = default;
    Mask(std::size_t h, std::size_t w, std::int32_t fill = 0) : height(h), width(w), labels(h * w, fill) {}
    Mask(std::size_t h, std::size_t w, std::vector<std::int32_t> l) : height(h), width(w), labels(std::move(l)) {
        if (labels.size() != h * w)
            throw ShapeError("mask label count " + std::to_string(labels.size()) + " != " +
                             std::to_string(h) + "x" + std::to_string(w));
    }

    std::int32_t& at(std::size_t r, std::size_t c) noexcept { return labels[r * width + c]; }
    std::int32_t at(std::size_t r, std::size_t c) const noexcept { return labels[r * width + c]; }
    std::size_t size() const noexcept { return labels.size(); }

    bool is_binary() const noexcept {
        for (auto v : labels)
            if (v != 0 && v != 1) return false;
        return true;
    }

    std::size_t count(std::int32_t label) const noexcept {
        std::size_t n = 0;
        for (auto v : labels) n += (v == label);
        return n;
    }

    friend bool operator==(const Mask&, const Mask&) = default;
};

}  // namespace segdino
