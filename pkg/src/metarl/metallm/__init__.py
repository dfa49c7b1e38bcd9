"""Language-model proposal of symbolic algorithms."""

from .client import ChatClient, LlmEndpoint, Message, MockClient, OpenAIChatClient, TransportError
from .loop import LoopResult, check_drift_validity, propose_loop, replay_transcript, select_best
from .prompts import (
    ERROR_FEEDBACK,
    FITNESS_FEEDBACK,
    ProposalRecord,
    ProposalValidationError,
    ResponseFormatError,
    build_prompt,
    parse_response,
)

PPO_WARM_START_CODE = "relu((r - clip(r, 1 - eps, 1 + eps)) * A)"
SGD_WARM_START_CODE = "g * lr"
