#pragma once

#include "dunet/tensor.hpp"
#include "dunet/ops.hpp"
#include "dunet/gradcheck.hpp"
#include "dunet/serialize.hpp"
#include "dunet/param_store.hpp"
#include "dunet/config.hpp"
#include "dunet/config_io.hpp"
#include "dunet/backbone.hpp"
#include "dunet/adapter.hpp"
#include "dunet/fapm.hpp"
#include "dunet/decoder.hpp"
#include "dunet/losses.hpp"
#include "dunet/metrics.hpp"
#include "dunet/model.hpp"
#include "dunet/optim.hpp"
#include "dunet/trainer.hpp"
#include "dunet/audit.hpp"
