"""DeepONet surrogates for the PBDW update and the hybrid reconstruction."""
from .deeponet import (
    ForcingFamily,
    OperatorModel,
    TrainingSet,
    TrunkBasis,
    build_trunk_basis,
    derealify,
    generate_training_set,
    hybrid_reconstruct,
    init_model,
    load_model,
    loss_and_grad,
    orthogonality_penalty,
    orthogonality_ratio,
    predict_update,
    realify,
    sample_forcing,
    save_model,
    save_training_set,
    load_training_set,
    train_strong,
    train_weak,
    write_loss_curve,
)
from .mlp import Adam, MlpParams, adam_step, init_mlp, mlp_backward, mlp_forward, mlp_gradient
