"""Enrollment and verification protocol: wire format, server, client."""
from .challenge import (
    ChallengeBitstring,
    ChallengeEntry,
    ChallengeSet,
    LengthMismatchError,
    NonceMismatchError,
    ProtocolError,
    ResponseBitstring,
    SessionDecision,
    score_response,
)
from .client import Client, MissingLiveModelError, answer_challenge, open_challenge
from .server import PublicSealer, Server, VerifyPolicy, issue_challenge, seal_challenge
from .session import (
    LoopbackChannel,
    ServerRejected,
    WrongPasswordError,
    run_enrollment,
    run_verification,
)
from .wire import ErrorCode, Message, MessageType

# operation names used in the protocol description
server_issue_challenge = issue_challenge
client_answer_challenge = answer_challenge
server_score_response = score_response
