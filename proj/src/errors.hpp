#pragma once

#include <stdexcept>
#include <string>

namespace ct {

enum class ErrorCode {
    ok = 0,
    invalid_argument = 1,
    io = 2,
    geometry = 3,
    projection = 4,
    degenerate_edge = 5,
    order = 6,
    singular_gram = 7,
    convergence = 8,
    rank_deficiency = 9,
    degenerate = 10,
    shape = 11,
    missing_jet = 12,
    config = 13,
    runtime = 14,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

#define CT_ERROR_CLASS(Name, code_value)                                        \
    class Name : public Error {                                                 \
    public:                                                                     \
        explicit Name(const std::string& msg)                                   \
            : Error(ErrorCode::code_value, msg) {}                              \
    }

CT_ERROR_CLASS(InvalidArgumentError, invalid_argument);
CT_ERROR_CLASS(IoError, io);
CT_ERROR_CLASS(GeometryError, geometry);
CT_ERROR_CLASS(ProjectionError, projection);
CT_ERROR_CLASS(DegenerateEdgeError, degenerate_edge);
CT_ERROR_CLASS(OrderError, order);
CT_ERROR_CLASS(SingularGramError, singular_gram);
CT_ERROR_CLASS(ConvergenceError, convergence);
CT_ERROR_CLASS(RankError, rank_deficiency);
CT_ERROR_CLASS(DegenerateError, degenerate);
CT_ERROR_CLASS(ZeroGradientError, degenerate);
CT_ERROR_CLASS(ShapeError, shape);
CT_ERROR_CLASS(MissingJetError, missing_jet);
CT_ERROR_CLASS(ConfigError, config);

#undef CT_ERROR_CLASS

}  // namespace ct
