#pragma once

#include <cmath>
#include <string>

#include "infoprune/error.hpp"

namespace infoprune {

enum class Activation { Identity, ReLU, SiLU };

inline double applyActivation(Activation a, double x) {
    switch (a) {
    case Activation::Identity: return x;
    case Activation::ReLU: return x > 0.0 ? x : 0.0;
    case Activation::SiLU: return x / (1.0 + std::exp(-x));
    }
    return x;
}

inline double activationDerivative(Activation a, double x) {
    switch (a) {
    case Activation::Identity: return 1.0;
    case Activation::ReLU: return x > 0.0 ? 1.0 : 0.0;
    case Activation::SiLU: {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
    }
    }
    return 1.0;
}

inline std::string activationName(Activation a) {
    switch (a) {
    case Activation::Identity: return "identity";
    case Activation::ReLU: return "relu";
    case Activation::SiLU: return "silu";
    }
    return "identity";
}

inline Activation activationFromName(const std::string& name) {
    if (name == "identity") return Activation::Identity;
    if (name == "relu") return Activation::ReLU;
    if (name == "silu") return Activation::SiLU;
    raise(Error::Kind::InvalidConfig, "unknown activation '" + name + "'");
}

} // namespace infoprune
