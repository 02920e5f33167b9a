#include "pidflow/error.hpp"

#include <exception>

namespace pidflow {

void rethrow_with_context(const std::string& context)
{
    try {
        throw;
    } catch (const ValidationError& e) {
        throw ValidationError(context + ": " + e.what());
    } catch (const NumericError& e) {
        throw NumericError(context + ": " + e.what());
    } catch (const IoError& e) {
        throw IoError(context + ": " + e.what());
    } catch (const std::exception& e) {
        throw Error(context + ": " + e.what());
    }
}

}  // namespace pidflow
