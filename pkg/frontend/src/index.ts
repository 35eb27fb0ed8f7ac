export * from "./proto";
export {
  AddressError,
  AuthFailed,
  BindingConnection,
  ClientError,
  ConnectFailed,
  ConnectionLost,
  DEFAULT_ADDRESS,
  ENV_ADDR,
  ENV_KEYFILE,
  NotInTty,
  RequestError,
  VersionMismatch,
  open,
  parseAddress,
} from "./client";
export type { Address, KeyEvent, OpenOptions } from "./client";
