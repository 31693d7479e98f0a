#pragma once

#include <stdexcept>
#include <string>

namespace auditcwe {

// Root of every error the library throws.  Each pipeline stage catches
// `Error` per report so that one bad input never aborts a batch.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define AUDITCWE_ERROR(Name)                                                                       \
    class Name : public Error {                                                                    \
    public:                                                                                        \
        using Error::Error;                                                                        \
    }

// taxonomy
AUDITCWE_ERROR(SchemaError);
AUDITCWE_ERROR(IntegrityError);
AUDITCWE_ERROR(LookupError);

// ingest / io
AUDITCWE_ERROR(IoError);
AUDITCWE_ERROR(ConversionError);
AUDITCWE_ERROR(ConfigError);

// llm
AUDITCWE_ERROR(ProviderError);
AUDITCWE_ERROR(TimeoutError);

// extractor / classifier
AUDITCWE_ERROR(MapError);
AUDITCWE_ERROR(ExtractionError);
AUDITCWE_ERROR(ClassificationError);

// fetcher
AUDITCWE_ERROR(NotFoundError);
AUDITCWE_ERROR(TransportError);
AUDITCWE_ERROR(EmptyBundleError);
AUDITCWE_ERROR(NoSourceError);
AUDITCWE_ERROR(AssemblyError);
AUDITCWE_ERROR(WriteError);
AUDITCWE_ERROR(ConflictError);

// analysis
AUDITCWE_ERROR(DomainError);

// cli
AUDITCWE_ERROR(UsageError);
AUDITCWE_ERROR(StageDependencyError);

#undef AUDITCWE_ERROR

class ApiError : public ProviderError {
public:
    ApiError(int status, std::string body_excerpt)
        : ProviderError("API returned HTTP " + std::to_string(status) + ": " + body_excerpt),
          status_(status), body_(std::move(body_excerpt)) {}

    int status() const noexcept { return status_; }
    const std::string& body() const noexcept { return body_; }

private:
    int status_;
    std::string body_;
};

class ParseError : public Error {
public:
    ParseError(const std::string& what, std::string raw) : Error(what), raw_(std::move(raw)) {}

    // The model output that failed to parse, kept for diagnostics.
    const std::string& raw() const noexcept { return raw_; }

private:
    std::string raw_;
};

} // namespace auditcwe
