from app.models.states import AdjointState, ChParams, CoupledState, FlowState, FluidParams, PhaseState

__all__ = ["AdjointState", "ChParams", "CoupledState", "FlowState", "FluidParams", "PhaseState"]
